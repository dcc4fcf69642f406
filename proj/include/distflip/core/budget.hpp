#pragma once

#include <atomic>
#include <cstdint>

#include <nlohmann/json.hpp>

namespace distflip {

/// Counted model evaluations. Plain value type; see BudgetMeter.
struct BudgetSnapshot {
  std::uint64_t forward = 0;           // source-model forward passes
  std::uint64_t backward = 0;          // source-model backward passes
  std::uint64_t attacker_forward = 0;  // learned-attacker forward passes

  std::uint64_t total() const { return forward + backward + attacker_forward; }

  BudgetSnapshot& operator+=(const BudgetSnapshot& o) {
    forward += o.forward;
    backward += o.backward;
    attacker_forward += o.attacker_forward;
    return *this;
  }
  friend BudgetSnapshot operator-(BudgetSnapshot a, const BudgetSnapshot& b) {
    a.forward -= b.forward;
    a.backward -= b.backward;
    a.attacker_forward -= b.attacker_forward;
    return a;
  }
  friend bool operator==(const BudgetSnapshot&, const BudgetSnapshot&) = default;
};

inline void to_json(nlohmann::json& j, const BudgetSnapshot& b) {
  j = {{"forward", b.forward}, {"backward", b.backward}, {"attacker_forward", b.attacker_forward}};
}

/// Thread-safe evaluation counter shared by concurrent attacks.
class BudgetMeter {
 public:
  void forward(std::uint64_t n = 1) { forward_.fetch_add(n, std::memory_order_relaxed); }
  void backward(std::uint64_t n = 1) { backward_.fetch_add(n, std::memory_order_relaxed); }
  void attacker_forward(std::uint64_t n = 1) { attacker_.fetch_add(n, std::memory_order_relaxed); }

  void add(const BudgetSnapshot& s) {
    forward(s.forward);
    backward(s.backward);
    attacker_forward(s.attacker_forward);
  }

  BudgetSnapshot snapshot() const {
    return {forward_.load(std::memory_order_relaxed), backward_.load(std::memory_order_relaxed),
            attacker_.load(std::memory_order_relaxed)};
  }

  void reset() {
    forward_ = 0;
    backward_ = 0;
    attacker_ = 0;
  }

 private:
  std::atomic<std::uint64_t> forward_{0};
  std::atomic<std::uint64_t> backward_{0};
  std::atomic<std::uint64_t> attacker_{0};
};

}  // namespace distflip
