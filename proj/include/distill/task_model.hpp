#pragma once

// Task model contract used by self-distillation, plus two deterministic
// stand-ins.

#include <string>
#include <string_view>

#include "distill/error.hpp"
#include "distill/quantize.hpp"
#include "distill/textmetrics.hpp"

namespace distill {

class TaskModel {
 public:
  virtual ~TaskModel() = default;
  /// Produces y for input x under the given control code. Unknown codes are
  /// protocol errors.
  virtual std::string infer(const std::string& x, std::string_view control_code) const = 0;
};

inline GroupKind require_control_code(std::string_view code) {
  auto g = group_for_control_code(code);
  if (!g) throw ProtocolError("unknown control code: " + std::string(code));
  return *g;
}

/// y = x.
class IdentityTaskModel final : public TaskModel {
 public:
  std::string infer(const std::string& x, std::string_view control_code) const override {
    require_control_code(control_code);
    return x;
  }
};

/// y = the first floor(n/2) tokens of x (at least one), whatever the code.
class TruncateHalfTaskModel final : public TaskModel {
 public:
  static std::size_t kept_tokens(std::size_t n) { return n / 2 == 0 ? 1 : n / 2; }

  std::string infer(const std::string& x, std::string_view control_code) const override {
    require_control_code(control_code);
    const auto t = tokenize(x);
    if (t.empty()) throw InputError("truncate-half: empty input");
    return join_tokens(std::span<const std::string>(t.tokens).first(kept_tokens(t.size())));
  }
};

}  // namespace distill
