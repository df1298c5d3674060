#include <random>

#include <gtest/gtest.h>

#include "spgen/offline_llm.hpp"
#include "spgen/reasoning.hpp"

using namespace spgen;

namespace {

GenerationContext sample_context(Task task = Task::long_text) {
  GenerationContext c;
  c.task = task;
  c.own_history = {{"Blade is sharp and the jar is sturdy", 5, false}};
  c.peer_texts = {"item1", {{"p#0", "motor is loud", 1.2}, {"q#0", "jar cracked", 0.4}}};
  c.task_input = task == Task::long_text ? "Solid blender" : "Blade is sharp";
  return c;
}

std::shared_ptr<MockBackend> scripted(std::vector<std::string> xs) { return std::make_shared<MockBackend>(std::move(xs)); }

Interaction review(const std::string& u, const std::string& i, const std::string& title, const std::string& text,
                   int rating) {
  Interaction x;
  x.user_id = u;
  x.item_id = i;
  x.title = title;
  x.text = text;
  x.rating = rating;
  return x;
}

}  // namespace

TEST(Reasoning, EmptySectionsRenderNone) {
  auto c = sample_context();
  auto p = render_prompt(Template::phi, c, {TargetReview{"t", "x", 4}, {}, {}});
  EXPECT_NE(p.find("Similar profiles:\n(none)\n"), std::string::npos);
  EXPECT_NE(p.find("User's own profile:\n- Blade is sharp and the jar is sturdy\n"), std::string::npos);
  EXPECT_NE(p.find("Product Reviews:\n- motor is loud\n- jar cracked\n"), std::string::npos);
}

TEST(Reasoning, PhiEmbedsExpectedOutputBlock) {
  auto p = render_prompt(Template::phi, sample_context(), {TargetReview{"Love it", "Works great daily", 5}, {}, {}});
  EXPECT_NE(p.find("Expected Output:\nTitle: \"Love it\"\nText: \"Works great daily\"\nRating: 5\n"), std::string::npos);
  EXPECT_NE(p.find("provide a detailed reasoning path"), std::string::npos);
  EXPECT_EQ(p.rfind("Your reasoning:"), p.size() - std::string("Your reasoning:").size());
}

TEST(Reasoning, RhoCarriesInstructionAndFormat) {
  auto c = sample_context();
  auto p = render_prompt(Template::rho, c);
  EXPECT_NE(p.find("Do not output anything else."), std::string::npos);
  EXPECT_NE(p.find("Reason and generate a review text based on the following review title."), std::string::npos);
  EXPECT_NE(p.find("Reasoning: <reasoning>. Review text: <Review text>."), std::string::npos);
  EXPECT_NE(p.find("\n\nReview title: Solid blender"), std::string::npos);
  auto direct = render_prompt(Template::direct, c);
  EXPECT_EQ(direct.find("Reasoning:"), std::string::npos);
  EXPECT_NE(direct.find("Do not output anything else."), std::string::npos);
}

TEST(Reasoning, TemplatesAdaptToTask) {
  auto r = render_prompt(Template::rho, sample_context(Task::rating));
  EXPECT_NE(r.find("Reason and generate a rating (1-5) based on the following review text."), std::string::npos);
  EXPECT_NE(r.find("- Blade is sharp and the jar is sturdy (rating 5)"), std::string::npos);
  auto s = render_prompt(Template::rho, sample_context(Task::short_text));
  EXPECT_NE(s.find("Review title: <Review title>"), std::string::npos);
}

TEST(Reasoning, XiNeedsReasoningAndCandidate) {
  auto c = sample_context();
  EXPECT_THROW(render_prompt(Template::phi, c), ConfigError);
  EXPECT_THROW(render_prompt(Template::xi, c, {std::nullopt, std::string("z"), std::nullopt}), ConfigError);
  auto p = render_prompt(Template::xi, c, {std::nullopt, std::string("be short"), std::string("Solid blender")});
  EXPECT_NE(p.find("Reasoning:\nbe short\n"), std::string::npos);
  EXPECT_NE(p.find("evaluate how well the provided review"), std::string::npos);
  EXPECT_NE(p.find("Evaluation: <evaluation>. Review text: <Review text>"), std::string::npos);
}

TEST(Reasoning, ParseSplitsAtFirstMarker) {
  auto r = parse_reasoned_output("Reasoning: prefers short reviews. Review text: Great product", Task::long_text);
  EXPECT_EQ(r.reasoning, "prefers short reviews.");
  EXPECT_EQ(r.payload, "Great product");
  auto twice = parse_reasoned_output("a Review text: b Review text: c", Task::long_text);
  EXPECT_EQ(twice.payload, "b Review text: c");
  EXPECT_THROW(parse_reasoned_output("no marker here", Task::long_text), ParseError);
  EXPECT_THROW(parse_reasoned_output("Reasoning: x. Review text:   ", Task::long_text), ParseError);
  EXPECT_EQ(parse_reasoned_output("Reasoning: x. Rating: 4", Task::rating).payload, "4");
}

TEST(Reasoning, RatingParsing) {
  EXPECT_EQ(parse_rating("4"), 4);
  EXPECT_EQ(parse_rating(" 5. "), 5);
  EXPECT_EQ(parse_rating("9"), 5);
  EXPECT_EQ(parse_rating("0"), 1);
  EXPECT_THROW(parse_rating("4.5"), ParseError);
  EXPECT_THROW(parse_rating("four"), ParseError);
  EXPECT_THROW(parse_rating(""), ParseError);
}

TEST(Reasoning, StrippingInvertsRendering) {
  std::mt19937_64 rng(8);
  const std::vector<std::string> words{"short", "tone", "battery", "likes", "value", "Review", "text", "title", "."};
  for (Task task : {Task::long_text, Task::short_text}) {
    for (int t = 0; t < 300; ++t) {
      auto phrase = [&](std::size_t n) {
        std::vector<std::string> w;
        for (std::size_t k = 0; k < n; ++k) w.push_back(words[rng() % words.size()]);
        return join(w, " ");
      };
      auto z = phrase(1 + rng() % 8), p = phrase(1 + rng() % 8);
      if (contains(z, payload_marker(task)) || contains(p, payload_marker(task))) continue;
      auto r = parse_reasoned_output(sft_completion(z, p, task), task);
      EXPECT_EQ(r.reasoning, trim(z));
      EXPECT_EQ(r.payload, trim(p));
    }
  }
}

TEST(Reasoning, OmegaValues) {
  const double ident = meteor(std::string("great blender"), std::string("great blender"));
  EXPECT_DOUBLE_EQ(omega_score("great blender", "great blender"), (1.0 + ident) / 2.0);
  EXPECT_EQ(omega_score("alpha beta", "gamma delta"), 0.0);
  // ROUGE-L 0.5 and METEOR 0.46875 (frozen oracle pair).
  EXPECT_NEAR(omega_score("a quick brown fox", "the quick brown dog"), (0.5 + 0.46875) / 2, 1e-12);
  EXPECT_NEAR(omega_score("one two three four five", "five four three two one"), (0.2 + 0.5) / 2, 1e-12);
  OmegaConfig with_r1{true};
  EXPECT_NEAR(omega_score("one two three four five", "five four three two one", with_r1), (0.2 + 0.5 + 1.0) / 3, 1e-12);
}

TEST(Reasoning, SelectGoldenExamples) {
  auto cands = [](std::vector<double> omegas) {
    std::vector<ReasoningCandidate> out;
    for (std::size_t k = 0; k < omegas.size(); ++k) out.push_back({static_cast<int>(k), "z", "t", omegas[k]});
    return out;
  };
  EXPECT_EQ(select_golden(cands({0.2, 0.5, 0.3})).index, 1);
  EXPECT_EQ(select_golden(cands({0.5, 0.5})).index, 0);
  EXPECT_EQ(select_golden(cands({0.7})).index, 0);
  EXPECT_THROW(select_golden({}), Error);
  auto unscored = cands({0.1});
  unscored[0].omega.reset();
  EXPECT_THROW(select_golden(unscored), Error);
}

TEST(Reasoning, SelectGoldenMatchesBruteForce) {
  std::mt19937_64 rng(123);
  for (int t = 0; t < 100; ++t) {
    std::vector<ReasoningCandidate> cs;
    for (int k = 0; k < 5; ++k) cs.push_back({k, "z", "t", static_cast<double>(rng() % 4) / 4.0});
    std::size_t best = 0;
    for (std::size_t k = 1; k < cs.size(); ++k)
      if (*cs[k].omega > *cs[best].omega) best = k;
    EXPECT_EQ(select_golden(cs).index, static_cast<int>(best));
  }
}

TEST(Reasoning, SamplingReturnsCandidatesInOrder) {
  LlmClient llm(scripted({"p0", "p1", "p2", "p3", "p4", "solo"}));
  auto c = sample_context();
  auto five = sample_reasoning_paths(llm, c, TargetReview{"t", "x", 3});
  ASSERT_EQ(five.size(), 5u);
  for (int k = 0; k < 5; ++k) {
    EXPECT_EQ(five[static_cast<std::size_t>(k)].index, k);
    EXPECT_EQ(five[static_cast<std::size_t>(k)].reasoning, "p" + std::to_string(k));
  }
  SamplingConfig one;
  one.paths = 1;
  EXPECT_EQ(sample_reasoning_paths(llm, c, TargetReview{"t", "x", 3}, one).size(), 1u);
  one.paths = 0;
  EXPECT_THROW(sample_reasoning_paths(llm, c, TargetReview{"t", "x", 3}, one), ConfigError);
}

TEST(Reasoning, RealizeAndScore) {
  LlmClient llm(scripted({"Evaluation: fine. Review text: the jar is sturdy", "no marker at all"}));
  auto c = sample_context();
  auto a = realize_and_score(llm, c, {0, "z", "", std::nullopt}, "the jar is sturdy");
  EXPECT_EQ(a.realized_output, "the jar is sturdy");
  EXPECT_DOUBLE_EQ(*a.omega, omega_score("the jar is sturdy", "the jar is sturdy"));
  auto b = realize_and_score(llm, c, {1, "z", "", std::nullopt}, "the jar is sturdy");
  EXPECT_EQ(b.realized_output, "no marker at all");
  EXPECT_EQ(*b.omega, 0.0);
}

TEST(Reasoning, SyntheticReviewRetriesGreedilyOnce) {
  std::vector<double> temps;
  int calls = 0;
  auto backend = std::make_shared<MockBackend>([&](const ChatRequest& r, int) {
    temps.push_back(r.temperature);
    return ++calls == 1 ? std::string("garbled") : std::string("Reasoning: likes jars. Review text: Sturdy jar");
  });
  LlmClient llm(backend);
  auto a = generate_synthetic_review(llm, "u", "i", sample_context(), Variant::full);
  ASSERT_TRUE(a.review);
  EXPECT_EQ(a.review->text, "Sturdy jar");
  EXPECT_EQ(a.review->reasoning, "likes jars.");
  EXPECT_TRUE(a.review->synthetic);
  EXPECT_EQ(a.retries, 1);
  EXPECT_EQ(temps, (std::vector<double>{0.8, 0.0}));

  LlmClient bad(scripted({"garbled", "still garbled"}));
  auto b = generate_synthetic_review(bad, "u", "i", sample_context(), Variant::full);
  EXPECT_FALSE(b.review);
  EXPECT_EQ(b.retries, 1);
  EXPECT_NE(b.warning.find("skipped"), std::string::npos);
}

TEST(Reasoning, AugmentationArithmeticAndLocality) {
  InteractionGraph g({review("u", "a", "t", "first", 4), review("v", "b", "t", "other", 2)});
  auto pu = profile_of(g, "u");
  auto pv = profile_of(g, "v");
  const auto pv_before = pv.entries;
  std::vector<SyntheticReview> syn{{"u", "x", "s1", "", true}, {"u", "y", "s2", "", true}};
  auto aug = augment_profile(pu, syn);
  EXPECT_EQ(aug.size(), 3u);
  EXPECT_EQ(aug.real, pu.entries);
  EXPECT_EQ(pv.entries, pv_before);
  EXPECT_EQ(profile_of(g, "v").entries, pv_before);
  EXPECT_EQ(sparsity_bucket(aug), SparsityBucket::one);

  auto cold = augment_profile(UserProfile{"w", {}}, {{"w", "x", "s", "", true}, {"w", "y", "s", "", true}});
  EXPECT_EQ(cold.size(), 2u);
  EXPECT_EQ(sparsity_bucket(cold), SparsityBucket::zero);
  EXPECT_THROW(augment_profile(pu, {{"v", "x", "s", "", true}}), Error);

  auto entries = context_entries(aug);
  ASSERT_EQ(entries.size(), 3u);
  EXPECT_FALSE(entries[0].synthetic);
  EXPECT_TRUE(entries[2].synthetic);
}

TEST(Reasoning, GeneratePersonalizedStripsReasoning) {
  LlmClient llm(scripted({"Reasoning: brief. Review text: Nice kettle"}));
  auto g = generate_personalized(llm, sample_context(), Variant::full);
  EXPECT_EQ(g.payload, "Nice kettle");
  EXPECT_EQ(g.reasoning, "brief.");
}

TEST(Reasoning, NoReasoningVariantTakesOutputWhole) {
  std::string seen;
  auto backend = std::make_shared<MockBackend>([&](const ChatRequest& r, int) {
    seen = r.user;
    return std::string("  Plain body text  ");
  });
  LlmClient llm(backend);
  auto g = generate_personalized(llm, sample_context(), Variant::no_reasoning_no_finetune);
  EXPECT_EQ(g.payload, "Plain body text");
  EXPECT_EQ(seen.find("Reasoning: <reasoning>"), std::string::npos);
}

TEST(Reasoning, RatingGeneration) {
  LlmClient llm(scripted({"Reasoning: mostly positive. Rating: 7", "Reasoning: meh. Rating: 3.5", "Rating: 2"}));
  auto c = sample_context(Task::rating);
  auto g = generate_personalized(llm, c, Variant::full);
  EXPECT_EQ(g.rating, 5);
  EXPECT_EQ(g.payload, "5");
  EXPECT_THROW(generate_personalized(llm, c, Variant::full), ParseError);
  EXPECT_EQ(generate_personalized(llm, c, Variant::no_reasoning_no_finetune).rating, 2);
}

TEST(Reasoning, VariantAndTaskParsing) {
  EXPECT_EQ(parse_variant("-ft"), Variant::no_finetune);
  EXPECT_EQ(parse_variant("-r-ft"), Variant::no_reasoning_no_finetune);
  EXPECT_THROW(parse_variant("x"), ConfigError);
  EXPECT_EQ(parse_task("short_text"), Task::short_text);
  EXPECT_THROW(parse_task("essay"), ConfigError);
}

TEST(Reasoning, SftRecordsAreLeaveOneOutAndLeakFree) {
  InteractionGraph g({review("a", "k1", "Sharp blade", "The blade stays sharp after months", 5),
                      review("a", "k2", "Loud motor", "Motor is loud but strong enough", 3),
                      review("b", "k1", "Good value", "Good value blender with a sturdy jar", 4),
                      review("b", "k3", "Broke fast", "Handle broke within a week sadly", 1),
                      review("c", "k2", "Fine", "Does the job for smoothies", 4)});
  std::map<std::string, Embedding> z{{"a", {1, 0}}, {"b", {0.8, 0.2}}, {"c", {0, 1}}};
  ContextBuilder ctx(g, z, 1, 4);
  LlmClient llm(make_offline_backend());
  for (Task task : {Task::long_text, Task::short_text, Task::rating}) {
    auto built = build_sft_records(g, ctx, llm, task);
    EXPECT_EQ(built.records.size() + built.skipped, g.interactions().size());
    EXPECT_EQ(built.records.size(), built.omegas.size());
    for (std::size_t r = 0; r < built.records.size(); ++r) {
      const auto& rec = built.records[r];
      EXPECT_EQ(rec.completion.rfind("Reasoning: ", 0), 0u);
      const auto marker = " " + payload_marker(task) + " ";
      auto pos = rec.completion.find(marker);
      ASSERT_NE(pos, std::string::npos);
      const auto target = rec.completion.substr(pos + marker.size());
      if (task != Task::rating) {
        EXPECT_FALSE(contains(rec.prompt, target)) << target;
      }
      EXPECT_EQ(built.omegas[r].size(), 5u);
    }
  }
  auto text = build_sft_records(g, ctx, llm, Task::long_text);
  std::size_t for_a = 0;
  for (const auto& rec : text.records)
    if (contains(rec.prompt, "The blade stays sharp") != contains(rec.prompt, "Motor is loud")) ++for_a;
  EXPECT_GE(for_a, 2u);
}
