#pragma once

#include <map>
#include <string>

#include "distflip/distill/attacker.hpp"
#include "distflip/evalbench/bench.hpp"
#include "distflip/hotflip/baselines.hpp"
#include "distflip/hotflip/search.hpp"

namespace distflip::evalbench {

struct AttackSettings {
  hotflip::StopRule stop = hotflip::StopRule::prediction_flipped();
  std::size_t max_flips = 0;  // 0 = default_max_flips(length)
  std::size_t prune_width = 32;
  std::size_t plus_beam = 3;
};

/// Registers hotflip-1/5/10, hotflip-plus, random, attention and one
/// "distflip" entry per named attacker model (keys become the names). Beam
/// widths not listed here are served on demand by `attacker_by_name`.
template <class T, class A>
AttackerRegistry standard_registry(const source::SourceModel<T>& model,
                                   const std::map<std::string, const distill::AttackerModel<A>*>& learned,
                                   const AttackSettings& cfg) {
  AttackerRegistry reg;
  auto beam = [&model, cfg](std::size_t k) {
    return [&model, cfg, k](const Sentence& s, std::mt19937_64&, BudgetMeter& meter) {
      hotflip::BeamOptions opt;
      opt.beam = k;
      opt.max_flips = cfg.max_flips;
      opt.stop = cfg.stop;
      return hotflip::beam_search(model, s, opt, meter);
    };
  };
  for (std::size_t k : {1, 5, 10}) reg.add("hotflip-" + std::to_string(k), beam(k));
  reg.add("hotflip-plus", [&model, cfg](const Sentence& s, std::mt19937_64&, BudgetMeter& meter) {
    hotflip::PlusOptions opt;
    opt.beam = cfg.plus_beam;
    opt.prune_width = cfg.prune_width;
    opt.max_flips = cfg.max_flips;
    opt.stop = cfg.stop;
    return hotflip::hotflip_plus(model, s, opt, meter);
  });
  const hotflip::BaselineOptions base{cfg.max_flips, cfg.stop};
  reg.add("random", [&model, base](const Sentence& s, std::mt19937_64& rng, BudgetMeter& meter) {
    return hotflip::random_baseline(model, s, rng, base, meter);
  });
  reg.add("attention", [&model, base](const Sentence& s, std::mt19937_64& rng, BudgetMeter& meter) {
    return hotflip::attention_baseline(model, s, rng, base, meter);
  });
  for (const auto& [name, att] : learned) {
    reg.add(name, [&model, att, cfg, name](const Sentence& s, std::mt19937_64&, BudgetMeter& meter) {
      distill::DistflipOptions opt;
      opt.max_flips = cfg.max_flips;
      opt.stop = cfg.stop;
      return distill::distflip_attack(*att, model, s, opt, meter, name);
    });
  }
  return reg;
}

/// Registry lookup that also understands "hotflip-K" for any K.
template <class T>
NamedAttacker attacker_by_name(const AttackerRegistry& reg, const std::string& name,
                               const source::SourceModel<T>& model, const AttackSettings& cfg) {
  if (reg.contains(name)) return reg.get(name);
  const std::string prefix = "hotflip-";
  if (name.rfind(prefix, 0) == 0) {
    std::size_t used = 0, k = 0;
    try {
      k = std::stoul(name.substr(prefix.size()), &used);
    } catch (const std::exception&) {
      throw UnknownAttacker(name);
    }
    if (k > 0 && used == name.size() - prefix.size())
      return {name, [&model, cfg, k](const Sentence& s, std::mt19937_64&, BudgetMeter& meter) {
                hotflip::BeamOptions opt;
                opt.beam = k;
                opt.max_flips = cfg.max_flips;
                opt.stop = cfg.stop;
                return hotflip::beam_search(model, s, opt, meter);
              }};
  }
  throw UnknownAttacker(name);
}

}  // namespace distflip::evalbench
