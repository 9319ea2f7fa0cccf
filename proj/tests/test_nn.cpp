#include <cmath>
#include <cstring>
#include <filesystem>

#include <gtest/gtest.h>

#include "dppo/dppo.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace dppo;
using nn::ArchConfig;
using nn::NetworkWeights;

namespace {

std::vector<double> random_obs(int size, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> obs(static_cast<std::size_t>(size) * size);
  for (double& v : obs) v = rng.uniform();
  return obs;
}

void randomize_biases(NetworkWeights& w, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = 1; i < w.params.size(); i += 2)
    for (double& v : w.params[i].values()) v = rng.uniform(-0.1, 0.1);
}

bool bit_equal(const NetworkWeights& a, const NetworkWeights& b) {
  if (a.params.size() != b.params.size()) return false;
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    const auto x = a.params[i].values();
    const auto y = b.params[i].values();
    if (x.size() != y.size() || std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) != 0) return false;
  }
  return true;
}

}  // namespace

TEST(Init, DeterministicPerSeed) {
  const ArchConfig a = ArchConfig::reduced();
  EXPECT_TRUE(bit_equal(nn::init_weights(5, a), nn::init_weights(5, a)));
  EXPECT_FALSE(bit_equal(nn::init_weights(5, a), nn::init_weights(6, a)));
}

TEST(Init, BiasesZeroAndWeightsFanInBounded) {
  const NetworkWeights w = nn::init_weights(1, ArchConfig::reduced(32));
  for (std::size_t i = 1; i < w.params.size(); i += 2)
    for (double v : w.params[i].values()) EXPECT_EQ(v, 0.0);
  for (std::size_t i = 0; i < w.params.size(); i += 2) {
    const auto& t = w.params[i];
    std::size_t fan_in = 1;
    for (std::size_t a = 1; a < t.rank(); ++a) fan_in *= t.dim(a);
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    double peak = 0.0;
    for (double v : t.values()) peak = std::max(peak, std::abs(v));
    EXPECT_LE(peak, bound);
    EXPECT_GT(peak, 0.0);
  }
}

TEST(Init, FullConfigShapes) {
  const ArchConfig a;
  EXPECT_EQ(a.flatten_width(), 4096);
  const auto shapes = NetworkWeights::shapes(a);
  ASSERT_EQ(shapes.size(), NetworkWeights::kTensorCount);
  EXPECT_EQ(shapes[0], (std::vector<std::size_t>{96, 1, 7, 7}));
  EXPECT_EQ(shapes[2], (std::vector<std::size_t>{64, 96, 5, 5}));
  EXPECT_EQ(shapes[4], (std::vector<std::size_t>{64, 64, 3, 3}));
  EXPECT_EQ(shapes[6], (std::vector<std::size_t>{64, 64, 3, 3}));
  EXPECT_EQ(shapes[8], (std::vector<std::size_t>{1024, 4096}));
  EXPECT_EQ(shapes[10], (std::vector<std::size_t>{256, 1024}));
  EXPECT_EQ(shapes[12], (std::vector<std::size_t>{128, 256}));
  EXPECT_EQ(shapes[14], (std::vector<std::size_t>{49, 128}));
  EXPECT_EQ(shapes[16], (std::vector<std::size_t>{1, 128}));
}

TEST(Init, RejectsBadConfigs) {
  ArchConfig a = ArchConfig::reduced();
  a.input_size = 24;
  EXPECT_THROW(nn::init_weights(0, a), ConfigError);
  a.input_size = 8;
  EXPECT_THROW(nn::init_weights(0, a), ConfigError);
  a = ArchConfig::reduced();
  a.kernels[1] = 4;
  EXPECT_THROW(nn::init_weights(0, a), ConfigError);
  a = ArchConfig::reduced();
  a.dense[2] = 0;
  EXPECT_THROW(nn::init_weights(0, a), ConfigError);
}

TEST(Forward, ZeroWeightsGiveUniformPolicy) {
  const NetworkWeights w = NetworkWeights::zeros(ArchConfig::reduced());
  const nn::PolicyOutput out = nn::forward(w, random_obs(16, 1));
  for (double p : out.probs) EXPECT_NEAR(p, 1.0 / 49.0, 1e-15);
  EXPECT_NEAR(out.probs[0], 0.020408, 1e-6);
  EXPECT_EQ(out.value, 0.0);
  EXPECT_NEAR(out.entropy(), std::log(49.0), 1e-12);
}

TEST(Forward, MatchesNaiveLayerOracle) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    NetworkWeights w = nn::init_weights(seed, ArchConfig::reduced());
    randomize_biases(w, seed + 100);
    const auto obs = random_obs(16, seed + 7);
    const nn::PolicyOutput out = nn::forward(w, obs);
    const auto want = oracle::network(w, obs);
    nn::GradientTape tape;
    nn::forward(w, obs, tape);
    for (int a = 0; a < 49; ++a) EXPECT_NEAR(tape.logits[a], want[a], 1e-9);
    EXPECT_NEAR(out.value, want[49], 1e-9);
  }
}

TEST(Forward, MatchesOracleWithMixedKernels) {
  ArchConfig a = ArchConfig::reduced(32);
  a.filters = {3, 5, 4, 6};
  a.kernels = {5, 3, 1, 3};
  a.dense = {7, 9, 5};
  NetworkWeights w = nn::init_weights(9, a);
  randomize_biases(w, 10);
  const auto obs = random_obs(32, 11);
  nn::GradientTape tape;
  nn::forward(w, obs, tape);
  const auto want = oracle::network(w, obs);
  for (int i = 0; i < 49; ++i) EXPECT_NEAR(tape.logits[i], want[i], 1e-9);
  EXPECT_NEAR(tape.output.value, want[49], 1e-9);
}

TEST(Forward, RejectsBadInput) {
  const NetworkWeights w = nn::init_weights(0, ArchConfig::reduced());
  EXPECT_THROW(nn::forward(w, random_obs(8, 0)), ShapeMismatchError);
  auto obs = random_obs(16, 0);
  obs[5] = std::nan("");
  EXPECT_THROW(nn::forward(w, obs), NonFiniteError);
  nn::GradientTape tape;
  EXPECT_THROW(nn::forward(w, Tensor({2, 16, 8}), tape), ShapeMismatchError);
  for (const auto& shape : {std::vector<std::size_t>{1, 16, 16}, {16, 16, 1}, {16, 16}})
    EXPECT_NO_THROW(nn::forward(w, Tensor(shape), tape));
}

TEST(Softmax, NormalizedPositiveAndConsistent) {
  const NetworkWeights w = nn::init_weights(4, ArchConfig::reduced());
  for (std::uint64_t s = 0; s < 100; ++s) {
    const nn::PolicyOutput out = nn::forward(w, random_obs(16, s));
    double sum = 0.0;
    for (std::size_t i = 0; i < out.probs.size(); ++i) {
      ASSERT_GT(out.probs[i], 0.0);
      ASSERT_NEAR(out.log_probs[i], std::log(out.probs[i]), 1e-9);
      sum += out.probs[i];
    }
    ASSERT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(Softmax, ShiftInvariantAndStable) {
  Rng rng(12);
  std::vector<double> logits(49);
  for (double& l : logits) l = rng.uniform(-5, 5);
  nn::PolicyOutput base;
  nn::softmax(logits, base);
  for (double c : {-1000.0, -3.5, 0.25, 700.0}) {
    std::vector<double> shifted = logits;
    for (double& l : shifted) l += c;
    nn::PolicyOutput out;
    nn::softmax(shifted, out);
    for (std::size_t i = 0; i < logits.size(); ++i) ASSERT_NEAR(out.probs[i], base.probs[i], 1e-12);
  }
  std::vector<double> extreme(49, 0.0);
  extreme[3] = 1e6;
  nn::PolicyOutput out;
  nn::softmax(extreme, out);
  EXPECT_EQ(out.probs[3], 1.0);
  for (double p : out.probs) EXPECT_TRUE(std::isfinite(p));
}

TEST(Backward, ZeroOutputGradientGivesZeroGradients) {
  NetworkWeights w = nn::init_weights(3, ArchConfig::reduced());
  randomize_biases(w, 4);
  nn::GradientTape tape;
  nn::forward(w, random_obs(16, 5), tape);
  const NetworkWeights g = nn::backward(w, tape, std::vector<double>(49, 0.0), 0.0);
  for (const auto& t : g.params)
    for (double v : t.values()) ASSERT_EQ(v, 0.0);
}

TEST(Backward, DeadReluPassesNoGradient) {
  NetworkWeights w = nn::init_weights(3, ArchConfig::reduced());
  for (double& b : w.dense_bias(0).values()) b = -1e6;  // every first dense unit is negative
  nn::GradientTape tape;
  nn::forward(w, random_obs(16, 5), tape);
  for (double h : tape.hidden[0]) ASSERT_EQ(h, 0.0);
  std::vector<double> gl(49, 0.3);
  const NetworkWeights g = nn::backward(w, tape, gl, 1.0);
  for (std::size_t i = 0; i <= NetworkWeights::kDenseBase + 1; ++i)
    for (double v : g.params[i].values()) ASSERT_EQ(v, 0.0) << NetworkWeights::names()[i];
}

TEST(Backward, PoolTiesRouteToFirstIndex) {
  NetworkWeights w = nn::init_weights(3, ArchConfig::reduced());
  w.conv_kernel(0).fill(0.0);
  for (double& b : w.conv_bias(0).values()) b = 0.5;  // constant pre-activation: every window ties
  nn::GradientTape tape;
  nn::forward(w, random_obs(16, 1), tape);
  const auto& st = tape.conv[0];
  const int s = 16;
  for (int f = 0; f < 8; ++f)
    for (int y = 0; y < s / 2; ++y)
      for (int x = 0; x < s / 2; ++x) {
        const std::size_t cell = (static_cast<std::size_t>(f) * (s / 2) + y) * (s / 2) + x;
        ASSERT_EQ(st.argmax[cell], static_cast<std::uint32_t>((f * s + 2 * y) * s + 2 * x));
      }
}

TEST(Backward, FullLossMatchesFiniteDifferences) {
  const ArchConfig a = ArchConfig::reduced();
  NetworkWeights w = nn::init_weights(21, a);
  randomize_biases(w, 22);
  // Larger policy head so the policy terms carry real weight in the trunk.
  for (double& v : w.dense_weight(3).values()) v *= 50.0;
  const auto buf = support::random_buffer(w, 6, 23);
  ppo::PPOConfig cfg;
  const auto r = support::check_gradients(w, buf, cfg, 50, 24);
  EXPECT_TRUE(r.covers(50));
  EXPECT_GE(r.pass_rate(), 0.99) << (r.failures.empty() ? "" : r.failures.front());
}

TEST(Backward, DeterministicReplay) {
  const NetworkWeights w = nn::init_weights(8, ArchConfig::reduced());
  nn::GradientTape tape;
  nn::forward(w, random_obs(16, 2), tape);
  std::vector<double> gl(49);
  Rng rng(1);
  for (double& g : gl) g = rng.uniform(-1, 1);
  EXPECT_TRUE(bit_equal(nn::backward(w, tape, gl, 0.7), nn::backward(w, tape, gl, 0.7)));
  nn::GradientTape tape2;
  nn::forward(w, random_obs(16, 2), tape2);
  EXPECT_EQ(tape.logits, tape2.logits);
}

TEST(Sampling, OneHotAndArgmax) {
  nn::PolicyOutput p;
  p.probs.assign(49, 0.0);
  p.probs[7] = 1.0;
  Rng rng(0);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(nn::sample_action(p, rng), 7);
  p.probs.assign(49, 0.01);
  p.probs[24] = 0.5;
  EXPECT_EQ(nn::argmax_action(p), 24);
}

TEST(Sampling, UniformFrequenciesWithinThreeSigma) {
  nn::PolicyOutput p;
  p.probs.assign(49, 1.0 / 49.0);
  Rng rng(derive_seed(7, Stream::kRollout));
  std::vector<long> counts(49, 0);
  const long n = 1000000;
  for (long i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(nn::sample_action(p, rng))];
  const double mean = n / 49.0;
  const double sigma = std::sqrt(n * (1.0 / 49.0) * (48.0 / 49.0));
  for (long c : counts) EXPECT_LE(std::abs(c - mean), 3.0 * sigma);
}

TEST(Sampling, DeterministicPerStream) {
  const NetworkWeights w = nn::init_weights(8, ArchConfig::reduced());
  const auto out = nn::forward(w, random_obs(16, 2));
  Rng a(5), b(5);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(nn::sample_action(out, a), nn::sample_action(out, b));
}

TEST(Adam, ZeroGradientsLeaveWeights) {
  NetworkWeights w = nn::init_weights(1, ArchConfig::reduced());
  const NetworkWeights before = w;
  nn::AdamState st = nn::AdamState::for_weights(w);
  nn::adam_step(w, w.zeros_like(), st, 1e-3);
  EXPECT_TRUE(bit_equal(w, before));
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, FirstStepIsLearningRateTimesSign) {
  NetworkWeights w = nn::init_weights(1, ArchConfig::reduced());
  const NetworkWeights before = w;
  NetworkWeights g = w.zeros_like();
  for (auto& t : g.params) t.fill(1.0);
  g.params[0].values()[0] = -1.0;
  nn::AdamState st = nn::AdamState::for_weights(w);
  nn::adam_step(w, g, st, 1e-3);
  const double expected = 1e-3 / (1.0 + 1e-8);
  EXPECT_NEAR(w.params[0].values()[0] - before.params[0].values()[0], expected, 1e-15);
  for (std::size_t i = 1; i < w.params.size(); ++i)
    for (std::size_t k = 0; k < w.params[i].size(); ++k)
      ASSERT_NEAR(w.params[i].values()[k] - before.params[i].values()[k], -expected, 1e-15);
}

TEST(Adam, RejectsNonFiniteWithoutSideEffects) {
  NetworkWeights w = nn::init_weights(1, ArchConfig::reduced());
  nn::AdamState st = nn::AdamState::for_weights(w);
  NetworkWeights g = w.zeros_like();
  for (auto& t : g.params) t.fill(0.1);
  nn::adam_step(w, g, st, 1e-3);
  const NetworkWeights w_before = w;
  const nn::AdamState st_before = st;
  g.params[5].values()[0] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(nn::adam_step(w, g, st, 1e-3), NonFiniteError);
  EXPECT_TRUE(bit_equal(w, w_before));
  EXPECT_EQ(st, st_before);
  EXPECT_THROW(nn::adam_step(w, NetworkWeights::zeros(ArchConfig::reduced(32)), st, 1e-3), ShapeMismatchError);
}

TEST(Adam, Deterministic) {
  const auto run = [] {
    NetworkWeights w = nn::init_weights(2, ArchConfig::reduced());
    nn::AdamState st = nn::AdamState::for_weights(w);
    nn::GradientTape tape;
    for (int i = 0; i < 5; ++i) {
      nn::forward(w, random_obs(16, static_cast<std::uint64_t>(i)), tape);
      const auto g = nn::backward(w, tape, std::vector<double>(49, 0.01), 0.5);
      nn::adam_step(w, g, st, 1e-3);
    }
    return w;
  };
  EXPECT_TRUE(bit_equal(run(), run()));
}

namespace {

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.weights = nn::init_weights(31, ArchConfig::reduced());
  randomize_biases(c.weights, 32);
  c.optimizer = nn::AdamState::for_weights(c.weights);
  NetworkWeights g = c.weights.zeros_like();
  Rng rng(33);
  for (auto& t : g.params)
    for (double& v : t.values()) v = rng.uniform(-1, 1);
  nn::adam_step(c.weights, g, c.optimizer, 1e-3);
  c.progress.updates = 17;
  c.progress.episodes = 40;
  c.progress.episode_returns = {1.5, -10.0, 0.1 + 0.2, 1e-300, 123456.789};
  c.progress.open_episode = OpenEpisode{{{1.25, 2.5, 0.75}, -0.3}, 12, 6.0, 88.125};
  return c;
}

}  // namespace

TEST(Checkpoint, RoundTripBitExact) {
  const Checkpoint c = sample_checkpoint();
  const std::string bytes = checkpoint::encode(c);
  EXPECT_EQ(bytes.substr(0, 4), "DPPO");
  const Checkpoint back = checkpoint::decode(bytes);
  EXPECT_EQ(back, c);
  EXPECT_TRUE(bit_equal(back.weights, c.weights));
  EXPECT_TRUE(bit_equal(back.optimizer.second_moment, c.optimizer.second_moment));
  EXPECT_EQ(checkpoint::encode(back), bytes);

  Checkpoint closed = c;
  closed.progress.open_episode.reset();
  EXPECT_EQ(checkpoint::decode(checkpoint::encode(closed)), closed);
}

TEST(Checkpoint, LittleEndianHeader) {
  const std::string bytes = checkpoint::encode(sample_checkpoint());
  EXPECT_EQ(bytes.substr(4, 4), std::string("\x01\x00\x00\x00", 4));
  EXPECT_EQ(bytes.substr(8, 4), std::string("\x12\x00\x00\x00", 4));  // 18 tensors
  EXPECT_EQ(bytes.substr(12, 4), std::string("\x04\x00\x00\x00", 4));  // first tensor rank
}

TEST(Checkpoint, FileRoundTripAndArchInference) {
  const Checkpoint c = sample_checkpoint();
  const auto path = std::filesystem::temp_directory_path() / "dppo_test_ckpt.bin";
  checkpoint::save(path, c);
  const Checkpoint back = checkpoint::load(path);
  EXPECT_EQ(back, c);
  EXPECT_EQ(back.weights.arch, ArchConfig::reduced());
  std::filesystem::remove(path);
  EXPECT_THROW(checkpoint::load(path), FormatError);
}

TEST(Checkpoint, RejectsCorruption) {
  const std::string bytes = checkpoint::encode(sample_checkpoint());
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(checkpoint::decode(bad), FormatError);
  bad = bytes;
  bad[4] = 2;
  EXPECT_THROW(checkpoint::decode(bad), FormatError);
  EXPECT_THROW(checkpoint::decode(bytes.substr(0, bytes.size() - 3)), FormatError);
  EXPECT_THROW(checkpoint::decode(bytes + "x"), FormatError);
  EXPECT_THROW(checkpoint::decode(""), FormatError);
}
