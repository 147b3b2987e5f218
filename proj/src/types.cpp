#include "flowattack/types.hpp"

namespace flowattack {

const char* category_name(Category c) {
  switch (c) {
    case Category::Void: return "void";
    case Category::Construction: return "construction";
    case Category::Flat: return "flat";
    case Category::Human: return "human";
    case Category::Nature: return "nature";
    case Category::Object: return "object";
    case Category::Sky: return "sky";
    case Category::Vehicle: return "vehicle";
  }
  return "?";
}

std::optional<Category> category_from_name(const std::string& name) {
  for (Category c : kAllCategories) {
    if (name == category_name(c)) return c;
  }
  return std::nullopt;
}

}  // namespace flowattack
