"""Passphrase-encrypted files for the participant keystore directory.

Each file is ``header || AES-256-GCM(ciphertext)``. The cleartext header
records the scrypt parameters, salt and nonce, and is bound as associated
data so it cannot be swapped.
"""
from __future__ import annotations

import os
import secrets
import struct
from pathlib import Path

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.scrypt import Scrypt

from .errors import UnlinkidError

MAGIC = b"ULKS1"
KDF_SCRYPT = 1
_HEADER = struct.Struct("<5sBBBB16s12s")


class KeystoreError(UnlinkidError):
    pass


def _derive(passphrase: bytes, salt: bytes, log2_n: int, r: int, p: int) -> bytes:
    return Scrypt(salt=salt, length=32, n=1 << log2_n, r=r, p=p).derive(passphrase)


def seal(plaintext: bytes, passphrase: str | bytes, *, log2_n: int = 14, r: int = 8, p: int = 1) -> bytes:
    if isinstance(passphrase, str):
        passphrase = passphrase.encode("utf-8")
    salt = secrets.token_bytes(16)
    nonce = secrets.token_bytes(12)
    header = _HEADER.pack(MAGIC, KDF_SCRYPT, log2_n, r, p, salt, nonce)
    key = _derive(passphrase, salt, log2_n, r, p)
    return header + AESGCM(key).encrypt(nonce, plaintext, header)


def unseal(blob: bytes, passphrase: str | bytes) -> bytes:
    if isinstance(passphrase, str):
        passphrase = passphrase.encode("utf-8")
    if len(blob) < _HEADER.size or blob[:5] != MAGIC:
        raise KeystoreError("not a keystore file")
    magic, kdf, log2_n, r, p, salt, nonce = _HEADER.unpack_from(blob)
    if kdf != KDF_SCRYPT or not 10 <= log2_n <= 22:
        raise KeystoreError("unsupported key-derivation parameters")
    header = blob[: _HEADER.size]
    try:
        return AESGCM(_derive(passphrase, salt, log2_n, r, p)).decrypt(nonce, blob[_HEADER.size:], header)
    except InvalidTag:
        raise KeystoreError("wrong passphrase or corrupted keystore file") from None


class Keystore:
    """Directory of sealed files, addressed by relative name."""

    def __init__(self, path: str | os.PathLike, passphrase: str | bytes, *, log2_n: int = 14):
        self.path = Path(path)
        self.passphrase = passphrase
        self.log2_n = log2_n

    def exists(self, name: str) -> bool:
        return (self.path / name).exists()

    def write(self, name: str, data: bytes) -> None:
        target = self.path / name
        target.parent.mkdir(parents=True, exist_ok=True)
        tmp = target.with_name(target.name + ".tmp")
        tmp.write_bytes(seal(data, self.passphrase, log2_n=self.log2_n))
        os.replace(tmp, target)

    def read(self, name: str) -> bytes:
        try:
            blob = (self.path / name).read_bytes()
        except FileNotFoundError:
            raise KeystoreError(f"keystore has no {name}") from None
        return unseal(blob, self.passphrase)

    def list(self, prefix: str) -> list[str]:
        base = self.path / prefix
        if not base.is_dir():
            return []
        return sorted(f"{prefix}/{p.name}" for p in base.iterdir() if not p.name.endswith(".tmp"))
