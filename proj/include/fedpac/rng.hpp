#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>

namespace fedpac {

/// What a random stream is used for. Part of the stream key so that two
/// consumers in the same (client, round) never share draws.
enum class Purpose : std::uint64_t {
  kInit = 1,
  kClassMeans,
  kSample,
  kTrainLabels,
  kTestLabels,
  kDirichlet,
  kQuantity,
  kRotation,
  kClientSampling,
  kHeadShuffle,
  kExtractorShuffle,
  kFinetuneShuffle,
  kTheory,
};

struct StreamId {
  std::uint64_t client = 0;
  std::uint64_t round = 0;
  Purpose purpose = Purpose::kInit;
};

/// Counter-based generator: the n-th draw is a pure function of
/// (seed, stream id, n). Streams never share state, so the order in which
/// concurrent workers consume them cannot change any value.
class RngStream {
 public:
  RngStream(std::uint64_t seed, StreamId id);

  std::uint64_t next_u64();
  /// Uniform on [0, 1).
  double uniform();
  /// Uniform on (0, 1].
  double uniform_open_low();
  double normal();
  /// Uniform integer in [0, n). n must be positive.
  std::size_t below(std::size_t n);
  /// Gamma(shape, 1) by Marsaglia-Tsang.
  double gamma(double shape);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(items[i - 1], items[j]);
    }
  }

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace fedpac
