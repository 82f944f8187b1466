#pragma once

#include "fdac/datasets.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace fdac {

enum class PayloadKind { params, prototypes, block_features, predictions };

std::string_view to_string(PayloadKind kind);

// Immutable once constructed; byte_size() is what the communication
// accounting charges.
struct Message {
  int sender_id = 0;
  int receiver_id = 0;
  PayloadKind kind = PayloadKind::params;
  std::vector<std::uint8_t> payload;

  std::size_t byte_size() const { return payload.size(); }
};

// Rolling-hash fingerprints of raw samples. A payload containing the exact
// byte string of any registered sample, at any offset, is flagged.
class FingerprintRegistry {
 public:
  void register_sample(std::span<const std::uint8_t> bytes);
  void register_dataset(const DomainDataset& dataset);

  std::size_t size() const;
  bool contains_registered_sample(std::span<const std::uint8_t> payload) const;

  static std::uint64_t fingerprint(std::span<const std::uint8_t> bytes);

 private:
  // Window length -> fingerprints of that length.
  std::map<std::size_t, std::unordered_set<std::uint64_t>> by_length_;
};

enum class GuardVerdict { pass, violation };

GuardVerdict privacy_guard(const Message& message, const FingerprintRegistry& registry);

// Throws PrivacyViolation naming the sender on a violation.
void enforce_privacy(const Message& message, const FingerprintRegistry& registry);

}  // namespace fdac
