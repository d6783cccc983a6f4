#!/usr/bin/env python3
"""Independent test-vector generator for the key schedule and layer cipher.

Recomputes, with stdlib hashlib and the pyca `cryptography` package, the
values the C++ implementation must produce:

  key derivation:  BLAKE2b-256 keyed with the raw X25519 output,
                   message = label || transcript, labels "fwd"/"bwd"/"tag"
  layer cipher:    ChaCha20-Poly1305 (IETF), 12-byte nonce = 4 zero octets
                   followed by the big-endian 64-bit counter

Run from the repository root; paste the output into tests that freeze
expected values.
"""

import hashlib

from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305


def kdf(shared: bytes, label: bytes, transcript: bytes) -> bytes:
    return hashlib.blake2b(label + transcript, digest_size=32, key=shared).digest()


def nonce(counter: int) -> bytes:
    return b"\x00" * 4 + counter.to_bytes(8, "big")


def main() -> None:
    shared = bytes(range(32))
    transcript = b"transcript-bytes"
    print("# derive_session_key(shared=00..1f, transcript='transcript-bytes')")
    print("fwd     =", kdf(shared, b"fwd", transcript).hex())
    print("bwd     =", kdf(shared, b"bwd", transcript).hex())
    print("confirm =", kdf(shared, b"tag", transcript).hex())

    key = bytes.fromhex("9f" * 32)
    aead = ChaCha20Poly1305(key)
    pt = b"\x01" + b"hello onion"  # DELIVER flag + body
    ct = aead.encrypt(nonce(0), pt, None)
    print("# seal_layer(key=9f*32, counter=0, DELIVER, 'hello onion')")
    print("ct      =", ct.hex())
    ct7 = aead.encrypt(nonce(7), pt, None)
    print("# same at counter=7")
    print("ct7     =", ct7.hex())


if __name__ == "__main__":
    main()
