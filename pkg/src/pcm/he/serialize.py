"""Byte formats for model ciphertexts and public keys.

Ciphertext layout (all integers unsigned)::

    u8   format version (0x01)
    u8   len, ascii   backend id
    u8   len, utf-8   parameter profile id
    16B  key id
    varint            depth used
    u8                freshness (0 fresh, 1 evaluated)
    varint            slot count
    u8                word width in bytes (4, or 8 when q >= 2^32)
    slot count words, little-endian
"""
from __future__ import annotations

import hashlib
import io

import numpy as np

from pcm.errors import BackendMismatch, MalformedFrame, UnsupportedVersion, WrongKey
from pcm.he.backend import Ciphertext, Freshness, KeyPair, ModelBackend, PublicKey, SecretKey

CT_VERSION = 1


def write_varint(buf: io.BytesIO, n: int) -> None:
    if n < 0:
        raise ValueError("varint must be non-negative")
    while True:
        b = n & 0x7F
        n >>= 7
        buf.write(bytes([b | (0x80 if n else 0)]))
        if not n:
            return


def read_varint(buf: io.BytesIO) -> int:
    shift = result = 0
    while True:
        b = buf.read(1)
        if not b:
            raise MalformedFrame("truncated varint")
        result |= (b[0] & 0x7F) << shift
        if not b[0] & 0x80:
            return result
        shift += 7
        if shift > 63:
            raise MalformedFrame("varint too long")


def _read_exact(buf: io.BytesIO, n: int) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise MalformedFrame(f"expected {n} bytes, got {len(data)}")
    return data


def _write_str(buf: io.BytesIO, s: str) -> None:
    raw = s.encode()
    if len(raw) > 255:
        raise ValueError("identifier too long")
    buf.write(bytes([len(raw)]))
    buf.write(raw)


def _read_str(buf: io.BytesIO) -> str:
    n = _read_exact(buf, 1)[0]
    try:
        return _read_exact(buf, n).decode()
    except UnicodeDecodeError as exc:
        raise MalformedFrame("identifier is not valid UTF-8") from exc


def serialize_ciphertext(ct: Ciphertext) -> bytes:
    buf = io.BytesIO()
    buf.write(bytes([CT_VERSION]))
    _write_str(buf, ct.backend_id)
    _write_str(buf, ct.params.profile_name)
    if len(ct.key_id) != 16:
        raise ValueError("key id must be 16 bytes")
    buf.write(ct.key_id)
    write_varint(buf, ct.depth)
    buf.write(bytes([0 if ct.freshness is Freshness.FRESH else 1]))
    write_varint(buf, len(ct.slots))
    width = 4 if ct.params.q < 2**32 else 8
    buf.write(bytes([width]))
    buf.write(ct.slots.astype("<u4" if width == 4 else "<u8").tobytes())
    return buf.getvalue()


def deserialize_ciphertext(data: bytes, backend: ModelBackend) -> Ciphertext:
    buf = io.BytesIO(data)
    version = _read_exact(buf, 1)[0]
    if version != CT_VERSION:
        raise UnsupportedVersion(f"ciphertext format version {version}")
    backend_id = _read_str(buf)
    profile = _read_str(buf)
    if backend_id != backend.backend_id or profile != backend.params.profile_name:
        raise BackendMismatch(f"ciphertext for {backend_id}/{profile}, expected "
                              f"{backend.backend_id}/{backend.params.profile_name}")
    key_id = _read_exact(buf, 16)
    depth = read_varint(buf)
    fresh = _read_exact(buf, 1)[0]
    if fresh not in (0, 1):
        raise MalformedFrame("bad freshness flag")
    n = read_varint(buf)
    if n != backend.slot_count:
        raise MalformedFrame(f"slot count {n} != {backend.slot_count}")
    width = _read_exact(buf, 1)[0]
    if width not in (4, 8):
        raise MalformedFrame(f"bad word width {width}")
    raw = _read_exact(buf, n * width)
    if buf.read(1):
        raise MalformedFrame("trailing bytes after ciphertext")
    slots = np.frombuffer(raw, dtype="<u4" if width == 4 else "<u8").astype(np.uint64)
    if n and int(slots.max()) >= backend.q:
        raise MalformedFrame("slot value not reduced modulo q")
    return Ciphertext(backend_id, key_id, backend.params, slots, depth,
                      Freshness.FRESH if fresh == 0 else Freshness.EVALUATED)


def public_key_to_dict(pk: PublicKey) -> dict:
    return {
        "key_id": pk.key_id.hex(),
        "backend": pk.backend.backend_id,
        "params": pk.params.describe(),
        "rotations": pk.rotations,
        "relin": pk.relin,
    }


def public_key_from_dict(d: dict) -> PublicKey:
    """Bind a received public key to a fresh backend of the advertised kind."""
    from pcm.he.backend import make_backend
    from pcm.he.params import HEParams

    try:
        params = HEParams.from_description(d["params"])
        backend = make_backend(d["backend"], params)
        key_id = bytes.fromhex(d["key_id"])
    except (KeyError, ValueError, TypeError) as exc:
        raise MalformedFrame(f"bad public key description: {exc}") from exc
    if len(key_id) != 16:
        raise MalformedFrame("key id must be 16 bytes")
    return backend.bind_public_key(key_id, rotations=bool(d.get("rotations", True)),
                                   relin=bool(d.get("relin", True)))


def keypair_to_dict(kp: KeyPair) -> dict:
    """Everything needed to restore a key pair (includes the secret token)."""
    d = public_key_to_dict(kp.public_key)
    d["secret_token"] = kp.secret_key.token.hex()
    return d


def keypair_from_dict(d: dict) -> KeyPair:
    pk = public_key_from_dict(d)
    try:
        token = bytes.fromhex(d["secret_token"])
    except (KeyError, ValueError, TypeError) as exc:
        raise MalformedFrame(f"bad secret key: {exc}") from exc
    if hashlib.blake2b(token, digest_size=16).digest() != pk.key_id:
        raise WrongKey("secret token does not match the key id")
    return KeyPair(pk, SecretKey(pk.key_id, pk.params, token, pk.backend))
