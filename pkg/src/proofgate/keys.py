"""Ed25519 keys for evaluator attestations and the public key registry."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

SIGNATURE_SCHEME = "ed25519"


class SigningKey:
    def __init__(self, private_key: Ed25519PrivateKey):
        self._key = private_key
        self.public_hex = (
            private_key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw).hex()
        )

    @classmethod
    def derive(cls, seed: str, evaluator_id: str) -> SigningKey:
        # Deterministic from (seed, id) so that repeated runs produce identical ledgers.
        raw = hashlib.sha256(f"evaluator-key:{seed}:{evaluator_id}".encode()).digest()
        return cls(Ed25519PrivateKey.from_private_bytes(raw))

    def sign(self, message: bytes) -> str:
        return self._key.sign(message).hex()


def verify_signature(public_hex: str, message: bytes, signature_hex: str) -> bool:
    try:
        key = Ed25519PublicKey.from_public_bytes(bytes.fromhex(public_hex))
        key.verify(bytes.fromhex(signature_hex), message)
    except (InvalidSignature, ValueError):
        return False
    return True


class KeyRegistry:
    """Public keys by evaluator id."""

    def __init__(self, keys: dict[str, str] | None = None):
        self._keys = dict(keys or {})

    def register(self, evaluator_id: str, public_hex: str) -> None:
        if evaluator_id in self._keys and self._keys[evaluator_id] != public_hex:
            raise ValueError(f"evaluator {evaluator_id!r} already registered with another key")
        self._keys[evaluator_id] = public_hex

    def public_key(self, evaluator_id: str) -> str | None:
        return self._keys.get(evaluator_id)

    def verify(self, evaluator_id: str, message: bytes, signature_hex: str) -> bool:
        public_hex = self._keys.get(evaluator_id)
        if public_hex is None or not signature_hex:
            return False
        return verify_signature(public_hex, message, signature_hex)

    def as_dict(self) -> dict[str, str]:
        return dict(sorted(self._keys.items()))

    def __contains__(self, evaluator_id: str) -> bool:
        return evaluator_id in self._keys

    def __len__(self) -> int:
        return len(self._keys)

    def save(self, path: Path) -> None:
        Path(path).write_text(
            json.dumps({"scheme": SIGNATURE_SCHEME, "keys": self.as_dict()}, indent=2) + "\n"
        )

    @classmethod
    def load(cls, path: Path) -> KeyRegistry:
        data = json.loads(Path(path).read_text())
        if data.get("scheme", SIGNATURE_SCHEME) != SIGNATURE_SCHEME:
            raise ValueError(f"unsupported signature scheme {data.get('scheme')!r}")
        return cls(data["keys"])
