#pragma once

// Frozen ROUGE-1/ROUGE-L/METEOR values for 25 (candidate, reference) pairs.

namespace spgen::testing {

struct FrozenPair {
  const char* candidate;
  const char* reference;
  double rouge1_f1;
  double rougeL_f1;
  double meteor;
};

// Values from tests/oracles/metrics_oracle.py.
inline const FrozenPair kFrozen[] = {
    {"the cat sat on the mat", "the cat sat on the mat", 1, 1, 0.99768518518518523},
    {"the cat sat on the mat", "on the mat the cat sat", 1, 0.5, 0.98148148148148151},
    {"a quick brown fox", "the quick brown dog", 0.5, 0.5, 0.46875},
    {"great product", "great product works well", 0.66666666666666663, 0.66666666666666663, 0.49342105263157893},
    {"works well", "great product works well", 0.66666666666666663, 0.66666666666666663, 0.49342105263157893},
    {"nothing in common", "completely different words", 0, 0, 0},
    {"the the the", "the cat", 0.40000000000000002, 0.40000000000000002, 0.23809523809523811},
    {"the cat", "the the the", 0.40000000000000002, 0.40000000000000002, 0.17241379310344826},
    {"Battery life is GREAT!", "battery life: great.", 0.8571428571428571, 0.8571428571428571, 0.82437275985663072},
    {"it is what it is", "is it what it is", 1, 0.80000000000000016, 0.89200000000000002},
    {"good good bad good", "good bad good bad", 0.75, 0.75, 0.73611111111111116},
    {"love it", "i love it so much", 0.57142857142857151, 0.57142857142857151, 0.39893617021276595},
    {"one two three four five", "five four three two one", 1, 0.20000000000000004, 0.5},
    {"a b a b a", "b a b a b", 0.80000000000000016, 0.80000000000000016, 0.79375000000000018},
    {"cheap and sturdy", "sturdy and cheap", 1, 0.33333333333333331, 0.5},
    {"the blender blade is sharp", "sharp blade on the blender", 0.80000000000000016, 0.40000000000000008,
     0.63125000000000009},
    {"x", "x", 1, 1, 0.5},
    {"x", "y", 0, 0, 0},
    {"tent poles snapped in wind", "the tent poles snapped in strong wind", 0.83333333333333326, 0.83333333333333326,
     0.71176470588235297},
    {"arrived late but works", "works fine but arrived late", 0.88888888888888895, 0.44444444444444448,
     0.64413265306122447},
    {"best kettle ever made", "ever made the best kettle", 0.88888888888888895, 0.44444444444444448,
     0.76530612244897966},
    {"a a b b", "b b a a", 1, 0.5, 0.9375},
    {"fit is small order a size up", "order a size up fit is small", 1, 0.5714285714285714, 0.98833819241982512},
    {"no", "no no no no", 0.40000000000000002, 0.40000000000000002, 0.13513513513513511},
    {"solid value for the price", "for the price solid value", 1, 0.59999999999999998, 0.96799999999999997},
};

}  // namespace spgen::testing
