#pragma once

#include <sodium.h>

#include <array>
#include <fstream>
#include <mutex>
#include <string>

#include "onionbox/bytes.hpp"
#include "onionbox/error.hpp"

namespace onionbox::crypto {

constexpr size_t KEY_LEN = 32;                                      // X25519 / symmetric
constexpr size_t AEAD_TAG_LEN = crypto_aead_chacha20poly1305_ietf_ABYTES;  // 16
constexpr size_t AEAD_NONCE_LEN = crypto_aead_chacha20poly1305_ietf_NPUBBYTES;  // 12
constexpr size_t SEAL_OVERHEAD = crypto_box_SEALBYTES;              // 48
constexpr size_t CONFIRM_LEN = 32;

using Key = std::array<uint8_t, KEY_LEN>;

inline void ensure_init() {
    static std::once_flag once;
    std::call_once(once, [] {
        if (sodium_init() < 0) throw Error(Error::Kind::Crypto, "sodium_init failed");
    });
}

inline Bytes random_bytes(size_t n) {
    ensure_init();
    Bytes out(n);
    if (n) randombytes_buf(out.data(), n);
    return out;
}

inline uint32_t random_u32() {
    ensure_init();
    uint32_t v;
    randombytes_buf(&v, sizeof v);
    return v;
}

// Long-term identity and handshake ephemerals are both X25519 keypairs.
struct KeyPair {
    Key public_key{};
    Key secret_key{};

    static KeyPair generate() {
        ensure_init();
        KeyPair kp;
        crypto_box_keypair(kp.public_key.data(), kp.secret_key.data());
        return kp;
    }
};

// Identity file: 64 raw octets (secret || public) hex-encoded, one line.
inline void save_identity(const KeyPair& kp, const std::string& path) {
    Bytes raw(kp.secret_key.begin(), kp.secret_key.end());
    raw.insert(raw.end(), kp.public_key.begin(), kp.public_key.end());
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw Error(Error::Kind::Io, "cannot write identity file: " + path);
    f << to_hex(raw) << "\n";
}

inline KeyPair load_identity(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error(Error::Kind::Io, "cannot read identity file: " + path);
    std::string hex;
    f >> hex;
    Bytes raw = from_hex(hex);
    if (raw.size() != 64)
        throw Error(Error::Kind::Validation, "identity file must hold 64 octets, got " +
                                                 std::to_string(raw.size()));
    KeyPair kp;
    std::copy(raw.begin(), raw.begin() + 32, kp.secret_key.begin());
    std::copy(raw.begin() + 32, raw.end(), kp.public_key.begin());
    return kp;
}

// Seal a blob to a long-term public key (anonymous sender).
inline Bytes seal_to(const Key& recipient_pk, BytesView plaintext) {
    ensure_init();
    Bytes out(plaintext.size() + SEAL_OVERHEAD);
    if (crypto_box_seal(out.data(), plaintext.data(), plaintext.size(), recipient_pk.data()) != 0)
        throw Error(Error::Kind::Crypto, "crypto_box_seal failed");
    return out;
}

inline Bytes unseal(const KeyPair& kp, BytesView ciphertext) {
    ensure_init();
    if (ciphertext.size() < SEAL_OVERHEAD)
        throw Error(Error::Kind::Crypto, "sealed blob too short");
    Bytes out(ciphertext.size() - SEAL_OVERHEAD);
    if (crypto_box_seal_open(out.data(), ciphertext.data(), ciphertext.size(),
                             kp.public_key.data(), kp.secret_key.data()) != 0)
        throw Error(Error::Kind::Crypto, "unseal failed: blob not sealed to this key");
    return out;
}

inline Key x25519_shared(const Key& own_secret, const Key& peer_public) {
    ensure_init();
    Key out{};
    if (crypto_scalarmult(out.data(), own_secret.data(), peer_public.data()) != 0)
        throw Error(Error::Kind::Crypto, "x25519 key agreement failed");
    return out;
}

// BLAKE2b keyed by the raw agreement output; label gives domain separation.
inline Key kdf_labeled(const Key& shared, const std::string& label, BytesView transcript) {
    ensure_init();
    Bytes msg = to_bytes(label);
    append(msg, transcript);
    Key out{};
    crypto_generichash(out.data(), out.size(), msg.data(), msg.size(), shared.data(),
                       shared.size());
    return out;
}

// Forward/backward keys plus the key-confirmation tag both sides can check.
struct SessionKeyMaterial {
    Key forward_key{};
    Key backward_key{};
    Key confirm{};
};

inline SessionKeyMaterial derive_session_key(const Key& shared_secret, BytesView transcript) {
    SessionKeyMaterial m;
    m.forward_key = kdf_labeled(shared_secret, "fwd", transcript);
    m.backward_key = kdf_labeled(shared_secret, "bwd", transcript);
    m.confirm = kdf_labeled(shared_secret, "tag", transcript);
    return m;
}

inline void counter_nonce(uint64_t counter, uint8_t out[AEAD_NONCE_LEN]) {
    std::memset(out, 0, AEAD_NONCE_LEN);
    put_be64(out + (AEAD_NONCE_LEN - 8), counter);
}

inline Bytes aead_seal(const Key& key, uint64_t counter, BytesView plaintext) {
    ensure_init();
    uint8_t nonce[AEAD_NONCE_LEN];
    counter_nonce(counter, nonce);
    Bytes out(plaintext.size() + AEAD_TAG_LEN);
    unsigned long long clen = 0;
    crypto_aead_chacha20poly1305_ietf_encrypt(out.data(), &clen, plaintext.data(),
                                              plaintext.size(), nullptr, 0, nullptr, nonce,
                                              key.data());
    out.resize(clen);
    return out;
}

inline Bytes aead_open(const Key& key, uint64_t counter, BytesView ciphertext) {
    ensure_init();
    if (ciphertext.size() < AEAD_TAG_LEN)
        throw Error(Error::Kind::Unwrap, "ciphertext shorter than tag");
    uint8_t nonce[AEAD_NONCE_LEN];
    counter_nonce(counter, nonce);
    Bytes out(ciphertext.size() - AEAD_TAG_LEN);
    unsigned long long plen = 0;
    if (crypto_aead_chacha20poly1305_ietf_decrypt(out.data(), &plen, nullptr, ciphertext.data(),
                                                  ciphertext.size(), nullptr, 0, nonce,
                                                  key.data()) != 0)
        throw Error(Error::Kind::Unwrap, "authentication failed");
    out.resize(plen);
    return out;
}

inline Bytes blake2b(BytesView data, size_t out_len = 32) {
    ensure_init();
    Bytes out(out_len);
    crypto_generichash(out.data(), out.size(), data.data(), data.size(), nullptr, 0);
    return out;
}

// Incremental BLAKE2b, for hashing streams without buffering them.
class Hasher {
public:
    Hasher() {
        ensure_init();
        crypto_generichash_init(&state_, nullptr, 0, 32);
    }

    void update(BytesView data) { crypto_generichash_update(&state_, data.data(), data.size()); }

    std::string hex() {
        uint8_t out[32];
        crypto_generichash_final(&state_, out, sizeof out);
        return to_hex(BytesView(out, sizeof out));
    }

private:
    crypto_generichash_state state_;
};

}  // namespace onionbox::crypto
