#include <gtest/gtest.h>

#include <random>

#include "distflip/hotflip/baselines.hpp"
#include "distflip/hotflip/search.hpp"
#include "support/fixtures.hpp"

using namespace distflip;
using namespace distflip::hotflip;
using distflip::testing::random_sentence;
using distflip::testing::tiny_source;
using distflip::testing::toy_vocab;

namespace {

double loss_of(const source::SourceModel<double>& m, const ad::Tensor<double>& x, int label) {
  ad::Tape<double> tape;
  nn::Bound<double> p(tape, m.params, false);
  auto g = source::build_source_graph(m, p, ad::constant(tape, x));
  return ad::bce_with_logits(g.logit, static_cast<double>(label)).value().item();
}

double tox(const source::SourceModel<double>& m, const std::vector<CharId>& x) {
  BudgetMeter scratch;
  return source::score(m, x, scratch);
}

// Greedy on true toxicity: score every admissible single flip, keep the first
// strictly lowest one in (pos, target) order.
std::vector<FlipAction> exhaustive_greedy(const source::SourceModel<double>& m, std::vector<CharId> x,
                                          std::size_t rounds) {
  std::vector<FlipAction> out;
  for (std::size_t r = 0; r < rounds; ++r) {
    double best = 2.0;
    FlipAction pick;
    for (std::size_t i = 0; i < x.size(); ++i)
      for (CharId c = 0; c < m.vocab.oov(); ++c) {
        if (c == x[i]) continue;
        auto y = x;
        y[i] = c;
        const double p = tox(m, y);
        if (p < best) best = p, pick = {i, c};
      }
    x[pick.pos] = pick.target;
    out.push_back(pick);
  }
  return out;
}

Sentence sentence_of(const corpus::Vocab& v, const std::string& text, int label = 1) {
  return corpus::make_sentence("t", text, label, v);
}

}  // namespace

TEST(FlipScores, ExcludeSelfFlipsAndNonTargets) {
  auto vocab = toy_vocab();
  ad::Tensor<double> g(ad::Shape{3, vocab.size()});
  auto fs = flip_scores_from_gradient(g, {0, 1, 2}, vocab);
  for (std::size_t i = 0; i < 3; ++i)
    for (CharId c = 0; c < vocab.size(); ++c) {
      if (c == i || c == vocab.oov())
        EXPECT_EQ(fs.at(i, c), kExcluded);
      else
        EXPECT_EQ(fs.at(i, c), 0.0);
    }
}

TEST(FlipScores, ZeroIndexGradientKeepsOnlyTargetTerms) {
  auto vocab = toy_vocab();
  ad::Tensor<double> g(ad::Shape{2, vocab.size()});
  g.at(0, 3) = 2.0;
  g.at(1, 1) = -1.0;
  auto fs = flip_scores_from_gradient(g, {3, 1}, vocab);
  EXPECT_EQ(fs.at(0, 0), -2.0);
  EXPECT_EQ(fs.at(1, 0), 1.0);
  EXPECT_EQ(argmax_flip(fs).flip, (FlipAction{1, 0}));
}

TEST(FlipScores, ArgmaxTiesGoToLowestPositionThenTarget) {
  FlipScores fs{2, 3, {kExcluded, 1.0, 1.0, 1.0, kExcluded, 1.0}};
  EXPECT_EQ(argmax_flip(fs).flip, (FlipAction{0, 1}));
  FlipScores none{1, 2, {kExcluded, kExcluded}};
  EXPECT_THROW(argmax_flip(none), std::invalid_argument);
}

TEST(FlipScores, MatchBruteForceDirectionalDerivatives) {
  auto vocab = toy_vocab(5);
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    auto m = tiny_source(vocab, 300 + trial);
    auto s = random_sentence(vocab, 4, rng);
    BudgetMeter meter;
    auto fs = flip_scores(m, s.chars, 1, meter);
    const auto x0 = source::one_hot<double>(s.chars, vocab.embedding_rows());
    double best_fd = -1e300;
    FlipAction best_flip;
    for (std::size_t i = 0; i < 4; ++i)
      for (CharId b = 0; b < vocab.oov(); ++b) {
        if (b == s.chars[i]) continue;
        const double eps = 1e-5;
        auto xp = x0, xm = x0;
        xp.at(i, b) += eps, xp.at(i, s.chars[i]) -= eps;
        xm.at(i, b) -= eps, xm.at(i, s.chars[i]) += eps;
        const double fd = (loss_of(m, xp, 1) - loss_of(m, xm, 1)) / (2 * eps);
        EXPECT_NEAR(fs.at(i, b), fd, 1e-6 + 1e-4 * std::abs(fd));
        if (fd > best_fd) best_fd = fd, best_flip = {i, b};
      }
    EXPECT_EQ(argmax_flip(fs).flip, best_flip) << trial;
  }
}

TEST(BeamSearch, WidthOneIsIteratedGreedy) {
  auto vocab = toy_vocab();
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 100; ++trial) {
    auto m = tiny_source(vocab, 400 + trial);
    auto s = random_sentence(vocab, 2 + rng() % 5, rng);
    BudgetMeter meter;
    BeamOptions opt;
    opt.beam = 1;
    opt.max_flips = 3;
    opt.stop = StopRule::prob_below(0.0);
    auto t = beam_search(m, s, opt, meter);
    auto x = s.chars;
    BudgetMeter scratch;
    ASSERT_EQ(t.flips.size(), 3u);
    for (std::size_t k = 0; k < 3; ++k) {
      auto step = greedy_step(m, x, 1, scratch);
      EXPECT_EQ(t.flips[k], step.flip) << trial << " round " << k;
      x[step.flip.pos] = step.flip.target;
    }
    EXPECT_FALSE(t.success);
  }
}

TEST(BeamSearch, MeteredCostEqualsDeclaredCostAndBound) {
  auto vocab = toy_vocab();
  std::mt19937_64 rng(23);
  for (std::size_t K : {1, 3, 5}) {
    for (int trial = 0; trial < 10; ++trial) {
      auto m = tiny_source(vocab, 500 + trial);
      auto s = random_sentence(vocab, 3 + rng() % 4, rng);
      BudgetMeter meter;
      BeamOptions opt;
      opt.beam = K;
      opt.stop = StopRule::prob_below(tox(m, s.chars) - 0.05);
      auto t = beam_search(m, s, opt, meter);
      EXPECT_EQ(t.budget, meter.snapshot());
      EXPECT_EQ(t.budget, beam_declared_cost(t));
      const std::uint64_t r = t.rounds.size();
      EXPECT_LE(t.budget.forward + t.budget.backward, 3 * K * r + 1);
    }
  }
}

TEST(BeamSearch, BestEstimateNonDecreasingInWidthForTwoRounds) {
  auto vocab = toy_vocab();
  std::mt19937_64 rng(24);
  for (int trial = 0; trial < 30; ++trial) {
    auto m = tiny_source(vocab, 600 + trial);
    auto s = random_sentence(vocab, 3 + rng() % 4, rng);
    for (std::size_t r : {1, 2}) {
      double prev = -1e300;
      for (std::size_t K : {1, 2, 3, 5, 8}) {
        BudgetMeter meter;
        BeamOptions opt{K, r, true, StopRule::prob_below(0.0)};
        auto t = beam_search(m, s, opt, meter);
        const double best = t.rounds.back().at("best_estimate").get<double>();
        EXPECT_GE(best, prev - 1e-12) << trial << " r=" << r << " K=" << K;
        prev = best;
      }
    }
  }
}

TEST(BeamSearch, ReplayReproducesScores) {
  auto vocab = toy_vocab();
  std::mt19937_64 rng(25);
  for (int trial = 0; trial < 20; ++trial) {
    auto m = tiny_source(vocab, 700 + trial);
    auto s = random_sentence(vocab, 3 + rng() % 4, rng);
    BudgetMeter meter;
    BeamOptions opt;
    opt.beam = 3;
    opt.stop = StopRule::prob_below(tox(m, s.chars) - 0.1);
    auto t = beam_search(m, s, opt, meter);
    auto xs = t.sentences();
    ASSERT_EQ(xs.size(), t.scores.size());
    for (std::size_t k = 0; k < xs.size(); ++k) EXPECT_EQ(tox(m, xs[k]), t.scores[k]);
    for (std::size_t k = 0; k + 1 < t.scores.size(); ++k) EXPECT_FALSE(opt.stop.satisfied(t.scores[k]));
    EXPECT_EQ(t.success, opt.stop.satisfied(t.final_score()));
    if (!t.success) EXPECT_FALSE(t.failure.empty());
  }
}

TEST(BeamSearch, AlreadyBenignInputCostsOneForward) {
  auto vocab = toy_vocab();
  auto m = tiny_source(vocab, 1);
  auto s = sentence_of(vocab, "abc");
  BudgetMeter meter;
  BeamOptions opt;
  opt.stop = StopRule::prob_below(1.0);
  auto t = beam_search(m, s, opt, meter);
  EXPECT_TRUE(t.success);
  EXPECT_EQ(t.num_flips(), 0u);
  EXPECT_EQ(t.budget, (BudgetSnapshot{1, 0, 0}));
  PlusOptions po;
  po.stop = opt.stop;
  auto p = hotflip_plus(m, s, po, meter);
  EXPECT_TRUE(p.success);
  EXPECT_EQ(p.budget, (BudgetSnapshot{1, 0, 0}));
}

TEST(BeamSearch, NoReflipBlocksPositions) {
  auto vocab = toy_vocab();
  std::mt19937_64 rng(26);
  auto m = tiny_source(vocab, 800);
  auto s = random_sentence(vocab, 3, rng);
  BudgetMeter meter;
  BeamOptions opt{2, 3, false, StopRule::prob_below(0.0)};
  auto t = beam_search(m, s, opt, meter);
  ASSERT_EQ(t.flips.size(), 3u);
  EXPECT_NE(t.flips[0].pos, t.flips[1].pos);
  EXPECT_NE(t.flips[1].pos, t.flips[2].pos);
  EXPECT_NE(t.flips[0].pos, t.flips[2].pos);
  opt.max_flips = 4;
  t = beam_search(m, s, opt, meter);
  EXPECT_FALSE(t.success);
  EXPECT_EQ(t.failure, "no admissible flips");
}

TEST(HotFlipPlus, UnprunedWidthOneIsExhaustiveGreedy) {
  auto vocab = toy_vocab();
  std::mt19937_64 rng(27);
  for (int trial = 0; trial < 30; ++trial) {
    auto m = tiny_source(vocab, 900 + trial);
    auto s = random_sentence(vocab, 1 + rng() % 6, rng);
    PlusOptions opt;
    opt.beam = 1;
    opt.prune = false;
    opt.prune_width = 0;
    opt.max_flips = 3;
    opt.stop = StopRule::prob_below(0.0);
    BudgetMeter meter;
    auto t = hotflip_plus(m, s, opt, meter);
    EXPECT_EQ(t.flips, exhaustive_greedy(m, s.chars, 3)) << trial;
    EXPECT_EQ(t.budget, beam_declared_cost(t));
    // every single flip of every round is scored
    for (const auto& r : t.rounds) EXPECT_EQ(r.at("scored").get<std::size_t>(), s.chars.size() * (vocab.oov() - 1));
  }
}

TEST(HotFlipPlus, MeteredCostEqualsDeclaredCost) {
  auto vocab = toy_vocab();
  std::mt19937_64 rng(28);
  for (int trial = 0; trial < 20; ++trial) {
    auto m = tiny_source(vocab, 1000 + trial);
    auto s = random_sentence(vocab, 3 + rng() % 4, rng);
    PlusOptions opt;
    opt.prune_width = 4;
    opt.stop = StopRule::prob_below(tox(m, s.chars) - 0.1);
    BudgetMeter meter;
    auto t = hotflip_plus(m, s, opt, meter);
    EXPECT_EQ(t.budget, meter.snapshot());
    EXPECT_EQ(t.budget, beam_declared_cost(t));
    for (const auto& r : t.rounds) EXPECT_LE(r.at("scored").get<std::size_t>(), r.at("beam").get<std::size_t>() * 4);
    auto xs = t.sentences();
    for (std::size_t k = 0; k < xs.size(); ++k) EXPECT_EQ(tox(m, xs[k]), t.scores[k]);
  }
}

TEST(HotFlipPlus, SpendsMoreForwardsThanBeamOfSameWidth) {
  auto vocab = toy_vocab();
  std::mt19937_64 rng(29);
  std::uint64_t plus = 0, beam = 0;
  for (int trial = 0; trial < 20; ++trial) {
    auto m = tiny_source(vocab, 1100 + trial);
    auto s = random_sentence(vocab, 4 + rng() % 3, rng);
    const auto stop = StopRule::prob_below(tox(m, s.chars) - 0.1);
    BudgetMeter a, b;
    PlusOptions po;
    po.stop = stop;
    plus += hotflip_plus(m, s, po, a).budget.forward;
    beam += beam_search(m, s, BeamOptions{3, 0, true, stop}, b).budget.forward;
  }
  EXPECT_GT(plus, beam);
}

TEST(Baselines, RandomOnTwoLetterVocabularyAlwaysPicksTheOther) {
  auto vocab = toy_vocab(2);
  std::mt19937_64 rng(1);
  for (int k = 0; k < 20; ++k) {
    EXPECT_EQ(detail::random_target(vocab, 0, rng), 1u);
    EXPECT_EQ(detail::random_target(vocab, 1, rng), 0u);
  }
  EXPECT_THROW(detail::random_target(toy_vocab(1), 0, rng), std::invalid_argument);
}

TEST(Baselines, RandomIsReproducibleFromSeed) {
  auto vocab = toy_vocab();
  auto m = tiny_source(vocab, 1200);
  std::mt19937_64 gen(30);
  auto s = random_sentence(vocab, 6, gen);
  BaselineOptions opt{4, StopRule::prob_below(0.0)};
  BudgetMeter meter;
  std::mt19937_64 r1(5), r2(5), r3(6);
  auto a = random_baseline(m, s, r1, opt, meter);
  auto b = random_baseline(m, s, r2, opt, meter);
  auto c = random_baseline(m, s, r3, opt, meter);
  EXPECT_EQ(a.flips, b.flips);
  EXPECT_EQ(a.scores, b.scores);
  EXPECT_NE(a.flips, c.flips);
  EXPECT_EQ(a.budget, (BudgetSnapshot{5, 0, 0}));
  for (const auto& f : a.flips) EXPECT_TRUE(vocab.is_flip_target(f.target));
}

TEST(Baselines, AttentionOnSingleCharacterFlipsIt) {
  auto vocab = toy_vocab();
  auto m = tiny_source(vocab, 1300);
  auto s = sentence_of(vocab, "c");
  std::mt19937_64 rng(2);
  BudgetMeter meter;
  auto t = attention_baseline(m, s, rng, BaselineOptions{1, StopRule::prob_below(0.0)}, meter);
  ASSERT_EQ(t.flips.size(), 1u);
  EXPECT_EQ(t.flips[0].pos, 0u);
  EXPECT_NE(t.flips[0].target, s.chars[0]);
  EXPECT_EQ(t.budget, (BudgetSnapshot{2, 0, 0}));
  EXPECT_EQ(t.scores.back(), tox(m, t.final_chars()));
}

TEST(Baselines, AttentionTargetsHeaviestPosition) {
  auto vocab = toy_vocab();
  auto m = tiny_source(vocab, 1400);
  std::mt19937_64 gen(31), rng(3);
  auto s = random_sentence(vocab, 6, gen);
  BudgetMeter meter;
  auto w = source::attention_weights(m, s.chars, meter);
  std::size_t top = 0;
  for (std::size_t k = 1; k < w.size(); ++k)
    if (w[k] > w[top]) top = k;
  auto t = attention_baseline(m, s, rng, BaselineOptions{1, StopRule::prob_below(0.0)}, meter);
  EXPECT_EQ(t.flips.at(0).pos, top);
}

TEST(Trace, JsonRoundTrip) {
  auto vocab = corpus::build_vocab();
  AttackTrace t;
  t.id = "synth-0007";
  t.attacker = "hotflip-5";
  t.initial = vocab.encode(U"you fool");
  t.flips = {{4, vocab.encode(U'x')}, {6, vocab.encode(U'"')}};
  t.scores = {0.9, 0.6, 0.3};
  t.estimate = 1.25;
  t.success = true;
  t.budget = {7, 3, 0};
  t.wall_ns = 12345;
  t.rounds = nlohmann::json::array({{{"beam", 1}, {"scored", 2}}});
  auto j = trace_to_json(t, vocab);
  EXPECT_EQ(j.at("final_text"), "you xo\"l");
  auto back = trace_from_json(nlohmann::json::parse(j.dump()), vocab);
  EXPECT_EQ(back.id, t.id);
  EXPECT_EQ(back.attacker, t.attacker);
  EXPECT_EQ(back.initial, t.initial);
  EXPECT_EQ(back.flips, t.flips);
  EXPECT_EQ(back.scores, t.scores);
  EXPECT_EQ(back.budget, t.budget);
  EXPECT_EQ(back.wall_ns, t.wall_ns);
  EXPECT_EQ(back.rounds, t.rounds);
  EXPECT_FALSE(j.contains("failure"));
}

TEST(StopRuleTest, StrictThreshold) {
  auto r = StopRule::prediction_flipped();
  EXPECT_TRUE(r.satisfied(0.49));
  EXPECT_FALSE(r.satisfied(0.5));
  EXPECT_FALSE(r.satisfied(0.8));
  EXPECT_TRUE(StopRule::prob_below(0.15).satisfied(0.1));
  EXPECT_FALSE(StopRule::prob_below(0.15).satisfied(0.15));
  EXPECT_EQ(default_max_flips(30), 30u);
  EXPECT_EQ(default_max_flips(400), 100u);
}
