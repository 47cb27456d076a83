// SPDX-License-Identifier: Apache-2.0
#include "hopscotch/hash.hpp"

#include <openssl/evp.h>

#include <stdexcept>

namespace hopscotch {

struct Sha256::Impl {
    EVP_MD_CTX* ctx = nullptr;
};

Sha256::Sha256() : impl_(std::make_unique<Impl>()) {
    impl_->ctx = EVP_MD_CTX_new();
    if (!impl_->ctx || EVP_DigestInit_ex(impl_->ctx, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256 init failed");
    }
}

Sha256::~Sha256() {
    if (impl_ && impl_->ctx) EVP_MD_CTX_free(impl_->ctx);
}

Sha256& Sha256::update(const void* data, std::size_t size) {
    if (size && EVP_DigestUpdate(impl_->ctx, data, size) != 1) {
        throw std::runtime_error("sha256 update failed");
    }
    return *this;
}

std::string Sha256::hex() {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(impl_->ctx, digest, &len) != 1) {
        throw std::runtime_error("sha256 final failed");
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(kHex[digest[i] >> 4]);
        out.push_back(kHex[digest[i] & 0xf]);
    }
    EVP_DigestInit_ex(impl_->ctx, EVP_sha256(), nullptr);
    return out;
}

std::string sha256_hex(std::string_view text) {
    Sha256 h;
    h.update(text);
    return h.hex();
}

}  // namespace hopscotch
