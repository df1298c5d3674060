#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "spgen/retrieval.hpp"

using namespace spgen;

namespace {

const std::vector<std::string> kVocab{"battery", "life", "great", "poor", "screen", "bright", "charger", "slow",
                                      "fast",    "cheap", "sturdy", "broke", "week", "love", "hate"};

std::vector<Document> random_corpus(std::mt19937_64& rng, std::size_t n_docs) {
  std::vector<Document> docs;
  for (std::size_t d = 0; d < n_docs; ++d) {
    std::string text;
    const std::size_t len = 1 + rng() % 12;
    for (std::size_t k = 0; k < len; ++k) text += (k ? " " : "") + kVocab[rng() % kVocab.size()];
    docs.push_back({"d" + std::to_string(100 + d), text});
  }
  return docs;
}

std::string random_query(std::mt19937_64& rng) {
  std::string q;
  const std::size_t len = 1 + rng() % 4;
  for (std::size_t k = 0; k < len; ++k) q += (k ? " " : "") + kVocab[rng() % kVocab.size()];
  if (rng() % 5 == 0) q += " unseenterm";
  return q;
}

// Direct evaluation of the scoring formula from raw token lists.
double oracle_score(const std::vector<std::vector<std::string>>& docs, std::size_t target,
                    const std::vector<std::string>& query, double k1 = 1.2, double b = 0.75) {
  const double n_docs = static_cast<double>(docs.size());
  double total = 0;
  for (const auto& d : docs) total += static_cast<double>(d.size());
  const double avg = total / n_docs;
  const auto& doc = docs[target];
  double s = 0;
  for (const auto& q : query) {
    double n = 0;
    for (const auto& d : docs) n += std::count(d.begin(), d.end(), q) > 0;
    const double f = static_cast<double>(std::count(doc.begin(), doc.end(), q));
    if (f == 0) continue;
    const double idf = std::log((n_docs - n + 0.5) / (n + 0.5) + 1.0);
    s += idf * f * (k1 + 1) / (f + k1 * (1 - b + b * static_cast<double>(doc.size()) / avg));
  }
  return s;
}

}  // namespace

TEST(Retrieval, ScoresMatchBruteForceFormula) {
  std::mt19937_64 rng(77);
  auto docs = random_corpus(rng, 20);
  std::vector<std::vector<std::string>> toks;
  for (const auto& d : docs) toks.push_back(tokenize(d.text));
  Bm25Index index(docs);
  for (int q = 0; q < 50; ++q) {
    auto query = random_query(rng);
    for (std::size_t d = 0; d < docs.size(); ++d)
      EXPECT_NEAR(index.score(query, docs[d].id), oracle_score(toks, d, tokenize(query)), 1e-9) << query;
  }
}

TEST(Retrieval, TopFourMatchesOracleRanking) {
  std::mt19937_64 rng(78);
  auto docs = random_corpus(rng, 20);
  // Duplicated texts force exact score ties.
  docs.push_back({"d000", docs[3].text});
  docs.push_back({"d999", docs[3].text});
  std::vector<std::vector<std::string>> toks;
  for (const auto& d : docs) toks.push_back(tokenize(d.text));
  Bm25Index index(docs);
  for (int q = 0; q < 50; ++q) {
    auto query = random_query(rng);
    std::vector<std::pair<double, std::string>> oracle;
    for (std::size_t d = 0; d < docs.size(); ++d) oracle.push_back({index.score(query, docs[d].id), docs[d].id});
    std::sort(oracle.begin(), oracle.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    auto top = index.top_k(query, 4);
    ASSERT_EQ(top.size(), 4u);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(top[k].id, oracle[k].second) << query;
  }
}

TEST(Retrieval, AverageLengthAndDocumentFrequency) {
  Bm25Index index(std::vector<Document>{{"a", "x y z"}, {"b", "x"}});
  EXPECT_DOUBLE_EQ(index.average_length(), 2.0);
  EXPECT_EQ(index.document_frequency("x"), 2u);
  EXPECT_EQ(index.document_frequency("z"), 1u);
  EXPECT_EQ(index.document_frequency("q"), 0u);
}

TEST(Retrieval, DuplicateIdsAndUnknownDocuments) {
  EXPECT_THROW(Bm25Index(std::vector<Document>{{"a", "x"}, {"a", "y"}}), ConfigError);
  Bm25Index index(std::vector<Document>{{"a", "x"}});
  EXPECT_THROW(index.score("x", "nope"), NotFoundError);
}

TEST(Retrieval, QueryWithNoSharedTermsScoresZero) {
  Bm25Index index(std::vector<Document>{{"a", "x y"}, {"b", "z"}});
  EXPECT_EQ(index.score("w v", "a"), 0.0);
  EXPECT_EQ(index.score("", "b"), 0.0);
}

TEST(Retrieval, MoreOccurrencesScoreHigherAtEqualLength) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 200; ++t) {
    auto docs = random_corpus(rng, 8);
    const std::size_t len = 2 + rng() % 6;
    const std::size_t lo = rng() % (len - 1);
    const std::size_t hi = std::min(len, lo + 1 + static_cast<std::size_t>(rng() % (len - lo)));
    auto make = [&](std::size_t hits) {
      std::string text;
      for (std::size_t k = 0; k < len; ++k) text += (k ? " " : "") + std::string(k < hits ? "target" : "other");
      return text;
    };
    docs.push_back({"lo", make(lo)});
    docs.push_back({"hi", make(hi)});
    Bm25Index index(docs);
    EXPECT_GT(index.score("target", "hi"), index.score("target", "lo"));
  }
}

TEST(Retrieval, AddingAnIrrelevantDocumentOfAverageLengthLowersNoScoreForSingleTermQueries) {
  // With one query term, an added document without the term raises N while
  // keeping n and (at average length) avglen fixed, so idf cannot fall.
  std::mt19937_64 rng(19);
  for (int t = 0; t < 100; ++t) {
    auto docs = random_corpus(rng, 10);
    Bm25Index before(docs);
    const auto avg = before.average_length();
    if (avg != std::floor(avg)) continue;
    const auto& term = kVocab[rng() % kVocab.size()];
    std::string filler;
    for (int k = 0; k < static_cast<int>(avg); ++k) filler += (k ? " " : "") + std::string("zzz");
    auto extended = docs;
    extended.push_back({"extra", filler});
    Bm25Index after(extended);
    for (const auto& d : docs) EXPECT_GE(after.score(term, d.id) + 1e-12, before.score(term, d.id));
  }
}

TEST(Retrieval, PeerTextsAreCappedAndDescending) {
  std::vector<Document> reviews{{"r1", "battery great"}, {"r2", "battery battery poor"}, {"r3", "screen bright"},
                                {"r4", "battery life great"}, {"r5", "charger slow"}, {"r6", "great great"}};
  auto ctx = peer_texts("item", reviews, "battery great", 4);
  EXPECT_EQ(ctx.item_id, "item");
  ASSERT_EQ(ctx.texts.size(), 4u);
  for (std::size_t k = 1; k < ctx.texts.size(); ++k) EXPECT_GE(ctx.texts[k - 1].score, ctx.texts[k].score);
  auto small = peer_texts("item", {{"r1", "x"}}, "x", 4);
  EXPECT_EQ(small.texts.size(), 1u);
  EXPECT_TRUE(peer_texts("item", {}, "x", 4).texts.empty());
}

TEST(Retrieval, CosineBasics) {
  EXPECT_NEAR(cosine({1, 0}, {0, 1}), 0.0, 1e-15);
  EXPECT_NEAR(cosine({1, 1}, {2, 2}), 1.0, 1e-15);
  EXPECT_EQ(cosine({0, 0}, {1, 1}), 0.0);
  EXPECT_THROW(cosine({1}, {1, 2}), ConfigError);
}

TEST(Retrieval, SimilarUsersExcludeSelfAndBreakTiesById) {
  std::map<std::string, Embedding> z{{"a", {1, 0}}, {"c", {1, 0}}, {"b", {1, 0}}, {"d", {0, 1}}, {"e", {-1, 0}}};
  auto top = similar_users(z, "a", 2);
  EXPECT_EQ(top, (std::vector<std::string>{"b", "c"}));
  auto all = similar_users(z, "a", 10);
  EXPECT_EQ(all.size(), 4u);
  EXPECT_EQ(all.back(), "e");
  EXPECT_THROW(similar_users(z, "zz", 2), NotFoundError);
}
