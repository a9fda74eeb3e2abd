#pragma once

#include <compare>
#include <map>
#include <string>

#include "kineverse/errors.hpp"

namespace kineverse {

/// A named scalar degree of freedom. `order` counts time derivatives: order 0
/// is the position variable "a", order 1 its velocity "a'", order 2 "a''" and
/// so on. The textual form appends one apostrophe per derivative order.
struct Variable {
  std::string name;
  int order = 0;

  Variable() = default;
  explicit Variable(std::string name, int order = 0) : name(std::move(name)), order(order) {}

  /// The same quantity one derivative order up ("a" -> "a'").
  Variable derivative(int by = 1) const { return Variable(name, order + by); }

  std::string text() const {
    std::string t = name;
    t.append(static_cast<size_t>(order), '\'');
    return t;
  }

  static Variable parse(const std::string& text) {
    size_t end = text.size();
    int order = 0;
    while (end > 0 && text[end - 1] == '\'') {
      --end;
      ++order;
    }
    if (end == 0) throw FormatError("variable text has no name: \"" + text + "\"");
    return Variable(text.substr(0, end), order);
  }

  auto operator<=>(const Variable&) const = default;
};

/// Partial or full mapping from variables to real values.
class Assignment {
public:
  Assignment() = default;
  Assignment(std::initializer_list<std::pair<const Variable, double>> init) : values_(init) {}

  void set(const Variable& v, double x) { values_[v] = x; }
  bool contains(const Variable& v) const { return values_.count(v) != 0; }

  double at(const Variable& v) const {
    auto it = values_.find(v);
    if (it == values_.end()) throw MissingVariableError(v.text());
    return it->second;
  }

  /// Entries of `other` are added, overriding collisions.
  void merge(const Assignment& other) {
    for (const auto& [v, x] : other.values_) values_[v] = x;
  }

  bool empty() const { return values_.empty(); }
  size_t size() const { return values_.size(); }

  auto begin() const { return values_.begin(); }
  auto end() const { return values_.end(); }

private:
  std::map<Variable, double> values_;
};

}  // namespace kineverse
