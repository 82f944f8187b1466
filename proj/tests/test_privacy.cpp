#include "support.hpp"

#include "fdac/checkpoint.hpp"
#include "fdac/error.hpp"
#include "fdac/privacy.hpp"

#include <doctest.h>

using namespace fdac;
using namespace fdac::testing;

namespace {

DomainDataset small_domain(std::uint64_t seed) {
  DomainSpec s;
  s.domain_id = "src";
  s.n_samples = 20;
  s.n_classes = 3;
  s.seed = seed;
  return make_synthetic_domains(5, std::vector<DomainSpec>{s}, ImageGeometry{3, 8, 4})[0];
}

}  // namespace

TEST_CASE("parameter and prototype payloads pass") {
  const DomainDataset d = small_domain(1);
  FingerprintRegistry registry;
  registry.register_dataset(d);
  CHECK(registry.size() == 20);

  const BackboneConfig c = tiny_backbone();
  const VisionTransformer model(c);
  const ModelParams params = model.initialize(2);
  Message m{0, 2, PayloadKind::params, serialize_checkpoint(c, params)};
  CHECK(privacy_guard(m, registry) == GuardVerdict::pass);
  CHECK_NOTHROW(enforce_privacy(m, registry));

  Message p{0, 2, PayloadKind::prototypes, serialize_prototypes(model.export_prototypes(params, 0))};
  CHECK(privacy_guard(p, registry) == GuardVerdict::pass);
}

TEST_CASE("a payload embedding a training sample is flagged") {
  const DomainDataset d = small_domain(1);
  FingerprintRegistry registry;
  registry.register_dataset(d);

  const BackboneConfig c = tiny_backbone();
  Bytes payload = serialize_checkpoint(c, VisionTransformer(c).initialize(3));
  const auto sample = d.sample_bytes(7);
  payload.insert(payload.begin() + 101, sample.begin(), sample.end());
  Message m{1, 2, PayloadKind::params, payload};
  CHECK(privacy_guard(m, registry) == GuardVerdict::violation);
  try {
    enforce_privacy(m, registry);
    FAIL("expected a privacy violation");
  } catch (const PrivacyViolation& e) {
    CHECK(e.sender_id() == 1);
  }

  // Exactly the sample, and the sample at the very end.
  CHECK(privacy_guard({1, 2, PayloadKind::params, sample}, registry) == GuardVerdict::violation);
  Bytes tail(13, 0xab);
  tail.insert(tail.end(), sample.begin(), sample.end());
  CHECK(privacy_guard({1, 2, PayloadKind::params, tail}, registry) == GuardVerdict::violation);

  // One flipped byte no longer matches.
  Bytes altered = sample;
  altered[40] ^= 1;
  CHECK(privacy_guard({1, 2, PayloadKind::params, altered}, registry) == GuardVerdict::pass);

  // Samples of another dataset are not registered.
  const DomainDataset other = small_domain(2);
  CHECK(privacy_guard({1, 2, PayloadKind::params, other.sample_bytes(0)}, registry) == GuardVerdict::pass);
}

TEST_CASE("rolling scan agrees with direct fingerprints") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> byte(0, 255);
  Bytes data(300);
  for (auto& b : data) b = static_cast<std::uint8_t>(byte(rng));
  FingerprintRegistry registry;
  const std::span<const std::uint8_t> window(data.data() + 150, 37);
  registry.register_sample(window);
  CHECK(registry.contains_registered_sample(data));
  CHECK_FALSE(registry.contains_registered_sample(std::span<const std::uint8_t>(data.data(), 186)));
  CHECK(registry.contains_registered_sample(std::span<const std::uint8_t>(data.data(), 187)));
  CHECK_THROWS_AS(registry.register_sample({}), InputError);
}
