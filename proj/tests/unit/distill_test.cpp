#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "distflip/distill/train.hpp"
#include "support/fixtures.hpp"
#include "support/param_fd.hpp"

using namespace distflip;
using namespace distflip::distill;
using distflip::testing::random_sentence;
using distflip::testing::tiny_source;
using distflip::testing::toy_vocab;

namespace {

AttackerConfig tiny_attacker() { return {4, 3, {5, 4}, {5, 4}}; }

// Random toy sentences the tiny model scores toxic.
std::vector<corpus::Sentence> toxic_fixtures(const source::SourceModel<double>& m, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<corpus::Sentence> out;
  BudgetMeter scratch;
  for (int tries = 0; out.size() < n && tries < 10000; ++tries) {
    auto s = random_sentence(m.vocab, 3 + rng() % 4, rng, "t" + std::to_string(tries));
    if (source::score(m, s, scratch) >= 0.5) out.push_back(s);
  }
  return out;
}

}  // namespace

TEST(FlipPairs, WorkedExampleSerializesZeroBased) {
  auto vocab = corpus::build_vocab();
  hotflip::AttackTrace t;
  t.id = "ex";
  t.attacker = "hotflip-5";
  t.initial = vocab.encode(U"Asshole");
  t.flips = {{3, vocab.encode(U'n')}};
  auto pairs = pairs_from_trace(t);
  ASSERT_EQ(pairs.size(), 1u);
  auto j = pair_to_json(pairs[0], vocab);
  EXPECT_EQ(j.at("text"), "Asshole");
  EXPECT_EQ(j.at("pos"), 3);
  EXPECT_EQ(j.at("target_char"), "n");
  EXPECT_EQ(vocab.decode_utf8(t.final_chars()), "Assnole");
  EXPECT_EQ(pair_from_json(j, vocab), pairs[0]);
}

TEST(FlipPairs, TraceWithoutFlipsYieldsNothing) {
  hotflip::AttackTrace t;
  t.initial = {1, 2};
  t.scores = {0.1};
  EXPECT_TRUE(pairs_from_trace(t).empty());
}

TEST(FlipPairs, GeneratorNames) {
  EXPECT_EQ(GeneratorSpec{"hotflip-5"}.beam(), 5u);
  EXPECT_EQ(GeneratorSpec{"hotflip-10"}.beam(), 10u);
  EXPECT_EQ(GeneratorSpec{"hotflip-plus"}.beam(), 0u);
  EXPECT_THROW(GeneratorSpec{"hotflip-0"}.beam(), std::invalid_argument);
  EXPECT_THROW(GeneratorSpec{"hotflip-5x"}.beam(), std::invalid_argument);
  EXPECT_THROW(GeneratorSpec{"random"}.beam(), std::invalid_argument);
}

TEST(GenerateDataset, SuccessfulTracesReplayAndEndBelowThreshold) {
  auto vocab = toy_vocab();
  auto m = tiny_source(vocab, 41);
  auto sentences = toxic_fixtures(m, 20, 41);
  ASSERT_GE(sentences.size(), 10u);
  auto benign = sentences[0];
  benign.label = 0;
  benign.id = "benign";
  sentences.push_back(benign);
  for (const char* g : {"hotflip-1", "hotflip-3", "hotflip-plus"}) {
    auto data = generate_dataset(m, sentences, GeneratorSpec{g}, 0.3);
    EXPECT_EQ(data.attempted, sentences.size() - 1) << g;
    EXPECT_EQ(data.failures.back().id, "benign");
    EXPECT_EQ(data.failures.back().reason, "not labeled toxic");
    EXPECT_EQ(check_replay(data.pairs, data.traces), "");
    std::size_t flips = 0;
    for (const auto& t : data.traces) {
      EXPECT_TRUE(t.success);
      EXPECT_LT(t.final_score(), 0.3);
      BudgetMeter scratch;
      EXPECT_EQ(source::score(m, t.final_chars(), scratch), t.final_score());
      flips += t.num_flips();
    }
    EXPECT_EQ(data.pairs.size(), flips);
    for (const auto& p : data.pairs) EXPECT_EQ(p.generator, g);
  }
}

TEST(GenerateDataset, ThreadCountDoesNotChangeOutput) {
  auto vocab = toy_vocab();
  auto m = tiny_source(vocab, 42);
  auto sentences = toxic_fixtures(m, 12, 42);
  auto a = generate_dataset(m, sentences, GeneratorSpec{"hotflip-3"}, 0.3, 1);
  auto b = generate_dataset(m, sentences, GeneratorSpec{"hotflip-3"}, 0.3, 3);
  EXPECT_EQ(a.pairs, b.pairs);
  EXPECT_EQ(a.budget, b.budget);
}

TEST(GenerateDataset, ReplayDetectsCorruption) {
  auto vocab = toy_vocab();
  hotflip::AttackTrace t;
  t.id = "x";
  t.initial = {0, 1, 2};
  t.flips = {{0, 3}, {2, 4}};
  auto pairs = pairs_from_trace(t);
  EXPECT_EQ(check_replay(pairs, {t}), "");
  pairs[1].chars[1] = 5;
  EXPECT_NE(check_replay(pairs, {t}), "");
}

TEST(GenerateDataset, JsonLinesRoundTrip) {
  auto vocab = corpus::build_vocab();
  std::vector<FlipPair> pairs = {{vocab.encode(U"a \"q\" b"), {2, vocab.encode(U'\\')}, "id-1", 0, "hotflip-5"},
                                 {vocab.encode(U"x,y"), {1, vocab.encode(U' ')}, "id-1", 1, "hotflip-5"}};
  auto path = (std::filesystem::temp_directory_path() / "distflip_pairs.jsonl").string();
  write_pairs(path, pairs, vocab);
  EXPECT_EQ(read_pairs(path, vocab), pairs);
  write_pairs(path, pairs, vocab, {{"seed", 3}});
  EXPECT_EQ(read_pairs(path, vocab), pairs);
  std::filesystem::remove(path);
}

TEST(GenerateDataset, SplitKeepsTracesTogether) {
  std::vector<FlipPair> pairs;
  for (int t = 0; t < 50; ++t)
    for (std::size_t k = 0; k < 3; ++k) pairs.push_back({{0, 1}, {0, 1}, "tr" + std::to_string(t), k, "g"});
  auto sp = split_pairs(pairs, {0.8, 0.1, 0.1, 7});
  EXPECT_EQ(sp.train.size() + sp.val.size() + sp.test.size(), pairs.size());
  EXPECT_EQ(sp.val.size(), 15u);
  EXPECT_EQ(sp.test.size(), 15u);
  std::map<std::string, int> where;
  auto mark = [&](const std::vector<FlipPair>& part, int tag) {
    for (const auto& p : part) {
      auto [it, fresh] = where.emplace(p.trace_id, tag);
      EXPECT_EQ(it->second, tag);
    }
  };
  mark(sp.train, 0);
  mark(sp.val, 1);
  mark(sp.test, 2);
}

TEST(Attacker, ForwardShapesAndDistribution) {
  auto vocab = corpus::build_vocab();
  auto a = init_attacker<float>(vocab, {}, 1);
  BudgetMeter meter;
  auto one = attacker_forward(a, vocab.encode(U"q"), meter);
  ASSERT_EQ(one.position_prob.size(), 1u);
  EXPECT_DOUBLE_EQ(one.position_prob[0], 1.0);
  auto out = attacker_forward(a, vocab.encode(U"hello there"), meter);
  EXPECT_EQ(out.position_prob.size(), 11u);
  EXPECT_EQ(out.target_logits.shape(), (ad::Shape{11, 96}));
  double s = 0;
  for (double p : out.position_prob) s += p;
  EXPECT_NEAR(s, 1.0, 1e-6);
  EXPECT_EQ(meter.snapshot(), (BudgetSnapshot{0, 0, 2}));
  auto again = attacker_forward(a, vocab.encode(U"hello there"), meter);
  EXPECT_EQ(again.position_logits, out.position_logits);
  EXPECT_EQ(again.target_logits.values(), out.target_logits.values());
}

TEST(Attacker, FullGraphMatchesFiniteDifferences) {
  auto vocab = toy_vocab();
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 3; ++trial) {
    auto a = init_attacker<double>(vocab, tiny_attacker(), 50 + trial);
    auto s = random_sentence(vocab, 5, rng);
    const FlipAction gold{rng() % 5, rng() % vocab.oov()};
    auto err = distflip::testing::param_gradient_error(
        a.params, source::one_hot<double>(s.chars, vocab.embedding_rows()),
        [&](ad::Var<double> x, nn::Bound<double>& b) { return attacker_loss(build_attacker_graph(a, b, x), gold); });
    EXPECT_LE(err, 1e-4) << trial;
  }
}

TEST(Attacker, LossOfUniformHeadsIsLogMPlusLogV) {
  auto vocab = corpus::build_vocab();
  auto a = init_attacker<double>(vocab, {}, 2);
  for (const char* n : {"pos.2.W", "pos.2.b", "tgt.2.W", "tgt.2.b"}) a.params.at(n).fill(0.0);
  ad::Tape<double> tape;
  nn::Bound<double> p(tape, a.params, false);
  auto g = build_attacker_graph(a, p, vocab.encode(U"abcd"));
  EXPECT_NEAR(attacker_loss(g, {2, 7}).value().item(), std::log(4.0) + std::log(96.0), 1e-12);
}

TEST(Attacker, LossVanishesWhenBothHeadsSaturateCorrectly) {
  ad::Tape<double> tape;
  ad::Tensor<double> pos(ad::Shape{1, 3}), tgt(ad::Shape{3, 5});
  pos.at(0, 1) = 60;
  tgt.at(1, 4) = 60;
  AttackerGraph<double> g{ad::constant(tape, pos), ad::constant(tape, tgt)};
  EXPECT_LT(attacker_loss(g, {1, 4}).value().item(), 1e-20);
  EXPECT_GT(attacker_loss(g, {0, 4}).value().item(), 50.0);
  // sum of the two heads' own cross-entropies
  const double both = attacker_loss(g, {1, 2}).value().item();
  const double tgt_only = -(0 - std::log(4 + std::exp(60.0)));
  EXPECT_NEAR(both, tgt_only, 1e-9);
}

TEST(Attacker, StepPicksArgmaxAndSkipsCurrentCharacter) {
  auto vocab = toy_vocab();
  AttackerOutput out;
  out.position_logits = {0.1, 2.0, 2.0, -1.0};
  out.target_logits = ad::Tensor<double>(ad::Shape{4, vocab.size()});
  out.target_logits.at(1, 3) = 5.0;
  out.target_logits.at(1, 6) = 4.0;
  out.target_logits.at(1, vocab.oov()) = 9.0;  // never a target
  EXPECT_EQ(attacker_step(out, {0, 0, 0, 0}, vocab), (FlipAction{1, 3}));
  EXPECT_EQ(attacker_step(out, {0, 3, 0, 0}, vocab), (FlipAction{1, 6}));
  EXPECT_EQ(attacker_step(out, {0, 3, 0, 0}, vocab, false), (FlipAction{1, 3}));
}

TEST(Attacker, MemorizesSingleRepeatedPair) {
  auto vocab = toy_vocab();
  auto a = init_attacker<double>(vocab, tiny_attacker(), 3);
  FlipPair pr{{0, 1, 2, 3, 4}, {3, 6}, "p", 0, "g"};
  AttackerTrainHyper h;
  h.epochs = 150;
  h.batch = 4;
  h.adam.lr = 0.02;
  auto r = train_attacker(a, std::vector<FlipPair>(4, pr), {pr}, h);
  EXPECT_LT(r.history.back()["train_loss"].get<double>(), 0.05);
  EXPECT_DOUBLE_EQ(r.history.back()["val_top1_position"].get<double>(), 1.0);
  BudgetMeter meter;
  EXPECT_EQ(attacker_step(attacker_forward(r.model, pr.chars, meter), pr.chars, vocab), pr.flip);
}

TEST(Attacker, SeededRetrainIsIdentical) {
  auto vocab = toy_vocab();
  std::mt19937_64 rng(44);
  std::vector<FlipPair> pairs;
  for (int k = 0; k < 10; ++k) {
    auto s = random_sentence(vocab, 4, rng);
    pairs.push_back({s.chars, {rng() % 4, rng() % vocab.oov()}, "t" + std::to_string(k), 0, "g"});
  }
  AttackerTrainHyper h;
  h.epochs = 3;
  h.batch = 3;
  h.seed = 9;
  auto a = train_attacker(init_attacker<float>(vocab, tiny_attacker(), 4), pairs, pairs, h);
  auto b = train_attacker(init_attacker<float>(vocab, tiny_attacker(), 4), pairs, pairs, h);
  EXPECT_TRUE(a.model.params == b.model.params);
  EXPECT_EQ(a.history, b.history);
}

TEST(Attacker, PositionRankTiesFavorLowerIndex) {
  EXPECT_EQ(position_rank({1, 3, 3, 0}, 1), 0u);
  EXPECT_EQ(position_rank({1, 3, 3, 0}, 2), 1u);
  EXPECT_EQ(position_rank({1, 3, 3, 0}, 3), 3u);
}

TEST(DistflipAttack, OneAttackerAndOneSourceForwardPerFlip) {
  auto vocab = toy_vocab();
  auto m = tiny_source(vocab, 45);
  auto sentences = toxic_fixtures(m, 10, 45);
  // stand-ins for attackers distilled from different generators
  auto a5 = init_attacker<double>(vocab, tiny_attacker(), 5);
  auto a10 = init_attacker<double>(vocab, tiny_attacker(), 10);
  for (const auto& s : sentences) {
    for (const auto* a : {&a5, &a10}) {
      BudgetMeter meter;
      DistflipOptions opt{4, hotflip::StopRule::prob_below(0.2)};
      auto t = distflip_attack(*a, m, s, opt, meter);
      const std::uint64_t l = t.num_flips();
      EXPECT_EQ(t.budget, (BudgetSnapshot{l + 1, 0, l}));
      EXPECT_EQ(t.budget, meter.snapshot());
      EXPECT_EQ(t.scores.size(), l + 1);
      for (const auto& f : t.flips) EXPECT_TRUE(vocab.is_flip_target(f.target));
      auto xs = t.sentences();
      for (std::size_t k = 0; k < l; ++k) EXPECT_NE(xs[k][t.flips[k].pos], t.flips[k].target);
    }
  }
}

TEST(DistflipAttack, AlreadyBelowThresholdMakesNoFlips) {
  auto vocab = toy_vocab();
  auto m = tiny_source(vocab, 46);
  auto a = init_attacker<double>(vocab, tiny_attacker(), 6);
  std::mt19937_64 rng(46);
  auto s = random_sentence(vocab, 4, rng);
  BudgetMeter meter;
  auto t = distflip_attack(a, m, s, {0, hotflip::StopRule::prob_below(1.0)}, meter);
  EXPECT_TRUE(t.success);
  EXPECT_EQ(t.num_flips(), 0u);
  EXPECT_EQ(t.budget, (BudgetSnapshot{1, 0, 0}));
}

TEST(Attacker, CheckpointRoundTripAndKindCheck) {
  auto vocab = corpus::build_vocab();
  auto a = init_attacker<float>(vocab, {}, 7);
  auto path = (std::filesystem::temp_directory_path() / "distflip_attacker.bin").string();
  save_attacker(a, path);
  auto back = load_attacker<float>(path, vocab.hash());
  EXPECT_TRUE(back.params == a.params);
  EXPECT_EQ(back.config, a.config);
  source::save_source(source::init_source<float>(vocab, {}, 1), path);
  EXPECT_THROW(load_attacker<float>(path), nn::CheckpointError);
  std::filesystem::remove(path);
}

TEST(Attacker, PretrainedEmbeddingRowsAreLoaded) {
  auto vocab = toy_vocab();
  auto path = (std::filesystem::temp_directory_path() / "distflip_emb.txt").string();
  {
    std::ofstream out(path);
    out << "a 0.5 0.25 -1 2\n";
    out << "\xc3\xa9 9 9 9 9\n";  // not in the vocabulary
    out << "c 1 1 1 1\n";
  }
  auto a = init_attacker<double>(vocab, tiny_attacker(), 8, path);
  EXPECT_EQ(a.params.at("embed.E").at(0, 1), 0.25);
  EXPECT_EQ(a.params.at("embed.E").at(2, 3), 1.0);
  {
    std::ofstream out(path);
    out << "a 1 2\n";
  }
  EXPECT_THROW(init_attacker<double>(vocab, tiny_attacker(), 8, path), std::runtime_error);
  std::filesystem::remove(path);
}
