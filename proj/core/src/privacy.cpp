#include "fdac/privacy.hpp"

#include "fdac/error.hpp"

#include <string>

namespace fdac {

namespace {

constexpr std::uint64_t kBase = 0x100000001b3ULL;

std::uint64_t power(std::uint64_t base, std::size_t exp) {
  std::uint64_t result = 1;
  while (exp > 0) {
    if (exp & 1U) result *= base;
    base *= base;
    exp >>= 1U;
  }
  return result;
}

}  // namespace

std::string_view to_string(PayloadKind kind) {
  switch (kind) {
    case PayloadKind::params: return "params";
    case PayloadKind::prototypes: return "prototypes";
    case PayloadKind::block_features: return "block-features";
    case PayloadKind::predictions: return "predictions";
  }
  return "unknown";
}

// Polynomial hash modulo 2^64; bytes are offset by one so zero runs still mix.
std::uint64_t FingerprintRegistry::fingerprint(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0;
  for (auto b : bytes) h = h * kBase + (std::uint64_t{b} + 1);
  return h;
}

void FingerprintRegistry::register_sample(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw InputError("cannot fingerprint an empty sample");
  by_length_[bytes.size()].insert(fingerprint(bytes));
}

void FingerprintRegistry::register_dataset(const DomainDataset& dataset) {
  for (std::size_t i = 0; i < dataset.size(); ++i) register_sample(dataset.sample_bytes(i));
}

std::size_t FingerprintRegistry::size() const {
  std::size_t n = 0;
  for (const auto& [len, set] : by_length_) n += set.size();
  return n;
}

bool FingerprintRegistry::contains_registered_sample(std::span<const std::uint8_t> payload) const {
  for (const auto& [window, set] : by_length_) {
    if (payload.size() < window) continue;
    const std::uint64_t drop = power(kBase, window);
    std::uint64_t h = fingerprint(payload.first(window));
    if (set.contains(h)) return true;
    for (std::size_t i = window; i < payload.size(); ++i) {
      h = h * kBase + (std::uint64_t{payload[i]} + 1) - (std::uint64_t{payload[i - window]} + 1) * drop;
      if (set.contains(h)) return true;
    }
  }
  return false;
}

GuardVerdict privacy_guard(const Message& message, const FingerprintRegistry& registry) {
  return registry.contains_registered_sample(message.payload) ? GuardVerdict::violation
                                                              : GuardVerdict::pass;
}

void enforce_privacy(const Message& message, const FingerprintRegistry& registry) {
  if (privacy_guard(message, registry) == GuardVerdict::violation) {
    throw PrivacyViolation(message.sender_id,
                           "privacy violation: " + std::string(to_string(message.kind)) +
                               " payload from client " + std::to_string(message.sender_id) +
                               " embeds a registered raw sample");
  }
}

}  // namespace fdac
