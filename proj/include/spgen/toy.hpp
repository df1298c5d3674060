#pragma once

// Small synthetic review corpus for offline runs: users with a writing style
// and a preferred product category, items with a feature vocabulary, and a
// per-user chronological split (last review to test, the one before it to
// validation for users with at least four reviews).

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "spgen/corpus.hpp"

namespace spgen {

struct ToyOptions {
  std::size_t users = 30;
  std::size_t items = 16;
  std::uint64_t seed = 7;
};

namespace toy {

inline const std::vector<std::vector<std::string>> kItemWords = {
    {"blender", "blade", "smoothie", "motor", "jar"},     {"kettle", "boil", "spout", "handle", "steel"},
    {"skillet", "cast", "iron", "sear", "heavy"},         {"toaster", "slot", "crumb", "tray", "browning"},
    {"knife", "edge", "sharp", "grip", "balance"},        {"mixer", "bowl", "whisk", "dough", "speed"},
    {"grinder", "burr", "coffee", "coarse", "fine"},      {"scale", "gram", "display", "flat", "tare"},
    {"tent", "pole", "rainfly", "stake", "zipper"},       {"backpack", "strap", "hip", "belt", "pocket"},
    {"lantern", "lumen", "battery", "glow", "hook"},      {"stove", "burner", "fuel", "simmer", "windscreen"},
    {"sleeping", "bag", "zipper", "loft", "warm"},        {"boots", "sole", "ankle", "lace", "waterproof"},
    {"filter", "water", "flow", "cartridge", "squeeze"},  {"hammock", "strap", "sag", "fabric", "knot"}};

inline const std::vector<std::vector<std::string>> kStyleWords = {
    {"honestly", "really", "pretty", "solid"},
    {"overall", "decent", "value", "recommend"},
    {"love", "amazing", "wonderful", "gift"},
    {"works", "fine", "simple", "basic"},
    {"quality", "sturdy", "durable", "build"}};

inline const std::vector<std::vector<std::string>> kTitles = {
    {"Really solid", "Pretty good", "Honestly great"},
    {"Decent value", "Would recommend", "Good overall"},
    {"Love it", "Amazing buy", "Wonderful gift"},
    {"Works fine", "Does the job", "Simple and basic"},
    {"Sturdy build", "Quality item", "Built to last"}};

inline std::string two_digit(std::size_t k) { return (k < 10 ? "0" : "") + std::to_string(k); }

}  // namespace toy

inline std::vector<Interaction> toy_reviews(const ToyOptions& opt = {}) {
  std::mt19937_64 rng(opt.seed);
  auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  const std::size_t n_items = std::min(opt.items, toy::kItemWords.size());
  const std::size_t half = n_items / 2;
  std::vector<Interaction> out;
  std::int64_t clock = 1'700'000'000;
  for (std::size_t u = 1; u <= opt.users; ++u) {
    const std::string user = "user" + toy::two_digit(u);
    const std::size_t style = u % toy::kStyleWords.size();
    const bool likes_kitchen = u % 2 == 0;
    // Users 1-6 are cold (test review only), 7-12 have one prior review.
    std::size_t count = u <= 6 ? 1 : u <= 12 ? 2 : 3 + pick(4);
    std::vector<std::size_t> chosen;
    while (chosen.size() < count) {
      const bool preferred = pick(10) < 8;
      const bool kitchen = preferred == likes_kitchen;
      std::size_t item = kitchen ? pick(half) : half + pick(n_items - half);
      if (std::find(chosen.begin(), chosen.end(), item) == chosen.end()) chosen.push_back(item);
    }
    for (std::size_t r = 0; r < count; ++r) {
      const std::size_t item = chosen[r];
      const bool kitchen = item < half;
      const bool happy = kitchen == likes_kitchen;
      const auto& iw = toy::kItemWords[item];
      const auto& sw = toy::kStyleWords[style];
      Interaction x;
      x.user_id = user;
      x.item_id = "item" + toy::two_digit(item + 1);
      x.title = toy::kTitles[style][pick(toy::kTitles[style].size())];
      std::string text = sw[pick(sw.size())] + " the " + iw[0] + " has a " + (happy ? "great " : "mediocre ") +
                         iw[1 + pick(iw.size() - 1)] + " and the " + iw[1 + pick(iw.size() - 1)] + " is " +
                         (happy ? "excellent" : "disappointing") + ", " + sw[pick(sw.size())] + " " +
                         sw[pick(sw.size())] + " " + (happy ? "happy with it" : "expected more");
      x.text = text;
      x.rating = static_cast<int>(happy ? 4 + pick(2) : 2 + pick(2));
      x.timestamp = clock;
      clock += 3600 + static_cast<std::int64_t>(pick(600));
      if (r + 1 == count) x.split = Split::test;
      else if (count >= 4 && r + 2 == count) x.split = Split::validation;
      else x.split = Split::train;
      out.push_back(std::move(x));
    }
  }
  return out;
}

}  // namespace spgen
