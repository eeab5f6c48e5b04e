#include <gtest/gtest.h>

#include <map>
#include <random>
#include <sstream>

#include "entrank/corpus.hpp"
#include "entrank/formats.hpp"

using namespace entrank;

namespace {

Document doc(std::string id, std::string text, std::vector<Mention> mentions = {}) {
  Document d{std::move(id), {}, std::move(mentions)};
  std::istringstream in(text);
  for (std::string w; in >> w;) d.tokens.push_back(w);
  return d;
}

// Ten documents over a six-word vocabulary with entity mentions sprinkled in.
std::vector<Document> fixture_corpus(std::uint32_t seed = 11) {
  std::mt19937 rng(seed);
  const std::vector<std::string> vocab{"violin", "maker", "italy", "wood", "string", "bow"};
  std::vector<Document> docs;
  for (int d = 0; d < 10; ++d) {
    Document doc{"doc" + std::to_string(d), {}, {}};
    const int len = 20 + static_cast<int>(rng() % 20);
    for (int i = 0; i < len; ++i) doc.tokens.push_back(vocab[rng() % vocab.size()]);
    const int mentions = 1 + static_cast<int>(rng() % 3);
    for (int m = 0; m < mentions; ++m) {
      const auto start = static_cast<std::uint32_t>(rng() % (len - 2));
      const auto width = 1 + static_cast<std::uint32_t>(rng() % 2);
      doc.mentions.push_back({"ent" + std::to_string(rng() % 4), start, start + width});
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

std::uint32_t brute_distance(std::uint32_t pos, std::uint32_t len, const Mention& m) {
  // Smallest gap between any occurrence token and any mention token.
  std::uint32_t best = UINT32_MAX;
  for (std::uint32_t a = pos; a < pos + len; ++a)
    for (std::uint32_t b = m.start; b < m.end; ++b) best = std::min(best, a > b ? a - b : b - a);
  return std::max<std::uint32_t>(best, 1);
}

std::vector<std::uint32_t> brute_occurrences(const Document& d, const QueryTerm& t) {
  std::vector<std::uint32_t> out;
  for (std::size_t p = 0; p + t.words.size() <= d.tokens.size(); ++p) {
    bool ok = true;
    for (std::size_t k = 0; k < t.words.size(); ++k) ok = ok && d.tokens[p + k] == t.words[k];
    if (ok) out.push_back(static_cast<std::uint32_t>(p));
  }
  return out;
}

}  // namespace

TEST(Ingest, EmptyStreamGivesEmptyIndex) {
  std::istringstream in("");
  auto index = ingest_corpus(in);
  EXPECT_EQ(index.num_docs(), 0u);
  EXPECT_THROW(compute_idf(index, "x"), std::domain_error);
}

TEST(Ingest, DocumentFrequencyCounts) {
  auto index = CorpusIndex::build({doc("a", "the violin"), doc("b", "violin violin"), doc("c", "piano"),
                                   doc("d", "drum")});
  EXPECT_EQ(index.df("violin"), 2u);
  EXPECT_EQ(index.cf("violin"), 3u);
  EXPECT_DOUBLE_EQ(compute_idf(index, "violin"), 2.0);
}

TEST(Ingest, IdfExamples) {
  auto index = CorpusIndex::build({doc("a", "t1 t2"), doc("b", "t1"), doc("c", "t1"), doc("d", "t1")});
  EXPECT_DOUBLE_EQ(compute_idf(index, "t1"), 1.0);
  EXPECT_DOUBLE_EQ(compute_idf(index, "t2"), 4.0);
  EXPECT_DOUBLE_EQ(compute_idf(index, "unseen"), 4.0);
  EXPECT_DOUBLE_EQ(compute_idf(index, make_query("q", {{"t1", false}, {"t2", false}})), 5.0);
}

TEST(Ingest, TokensAreLowercased) {
  auto index = CorpusIndex::build({doc("a", "Violin MAKER")});
  EXPECT_EQ(index.df("violin"), 1u);
  EXPECT_EQ(index.df("maker"), 1u);
  EXPECT_EQ(index.df("Violin"), 0u);
}

TEST(Ingest, PhraseDocumentFrequencyIsExact) {
  auto index = CorpusIndex::build(
      {doc("a", "new york city"), doc("b", "york new"), doc("c", "new york new york"), doc("d", "new")});
  auto q = make_query("q", {{"New York", false}});
  ASSERT_TRUE(q.terms[0].is_phrase());
  EXPECT_EQ(index.term_stats(q.terms[0]).df, 2u);
  EXPECT_EQ(index.term_stats(q.terms[0]).cf, 3u);
  EXPECT_DOUBLE_EQ(compute_idf(index, q.terms[0]), 2.0);
  // Cached value is stable.
  EXPECT_EQ(index.term_stats(q.terms[0]).df, 2u);
}

TEST(Ingest, RejectsMalformedRecordsWithLineNumber) {
  std::istringstream in(
      "{\"doc_id\":\"a\",\"tokens\":[\"x\"],\"mentions\":[]}\n"
      "{\"doc_id\":\"b\",\"tokens\":\"oops\"}\n");
  try {
    ingest_corpus(in);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Ingest, RejectsBadJsonWithLineNumber) {
  std::istringstream in("{\"doc_id\":\"a\",\"tokens\":[],\"mentions\":[]}\n\n{not json\n");
  try {
    ingest_corpus(in);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(Ingest, RejectsOutOfBoundsMention) {
  EXPECT_THROW(CorpusIndex::build({doc("a", "x y", {{"e", 1, 3}})}), FormatError);
  EXPECT_THROW(CorpusIndex::build({doc("a", "x y", {{"e", 1, 1}})}), FormatError);
}

TEST(Ingest, RejectsDuplicateDocId) {
  EXPECT_THROW(CorpusIndex::build({doc("a", "x"), doc("a", "y")}), FormatError);
  std::istringstream in(
      "{\"doc_id\":\"a\",\"tokens\":[\"x\"],\"mentions\":[]}\n"
      "{\"doc_id\":\"a\",\"tokens\":[\"y\"],\"mentions\":[]}\n");
  EXPECT_THROW(ingest_corpus(in), FormatError);
}

TEST(Ingest, IdempotentAndOrderInvariant) {
  auto docs = fixture_corpus();
  auto a = CorpusIndex::build(docs);
  std::reverse(docs.begin(), docs.end());
  auto b = CorpusIndex::build(docs);
  ASSERT_EQ(a.num_docs(), b.num_docs());
  for (std::uint32_t d = 0; d < a.num_docs(); ++d) EXPECT_EQ(a.document(d).doc_id, b.document(d).doc_id);
  for (const auto* w : {"violin", "maker", "italy", "wood", "string", "bow"}) {
    EXPECT_EQ(a.df(w), b.df(w));
    EXPECT_EQ(a.cf(w), b.cf(w));
  }
}

TEST(Ingest, PostingsMatchExhaustiveScan) {
  auto docs = fixture_corpus();
  auto index = CorpusIndex::build(docs);
  std::map<std::string, std::map<std::string, std::vector<std::uint32_t>>> expected;
  for (const auto& d : docs)
    for (std::uint32_t p = 0; p < d.tokens.size(); ++p) expected[d.tokens[p]][d.doc_id].push_back(p);
  EXPECT_EQ(index.vocabulary_size(), expected.size());
  for (const auto& [term, by_doc] : expected) {
    auto postings = index.postings(term);
    ASSERT_EQ(postings.size(), by_doc.size()) << term;
    for (const auto& p : postings) {
      const auto& id = index.document(p.doc).doc_id;
      ASSERT_TRUE(by_doc.count(id));
      EXPECT_EQ(p.positions, by_doc.at(id));
    }
    EXPECT_EQ(index.df(term), by_doc.size());
  }
}

TEST(Ingest, MentionsIndexedByEntity) {
  auto docs = fixture_corpus();
  auto index = CorpusIndex::build(docs);
  std::map<std::string, std::size_t> counts;
  for (const auto& d : docs)
    for (const auto& m : d.mentions) ++counts[m.entity_id];
  EXPECT_EQ(index.num_entities(), counts.size());
  for (const auto& [e, n] : counts) EXPECT_EQ(index.mentions_of(e).size(), n);
  EXPECT_TRUE(index.mentions_of("nobody").empty());
}

TEST(Formats, CorpusRoundTrip) {
  auto docs = fixture_corpus();
  std::ostringstream out;
  for (const auto& d : docs) write_document(out, d);
  std::istringstream in(out.str());
  auto back = read_documents(in);
  ASSERT_EQ(back.size(), docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) {
    EXPECT_EQ(back[i].doc_id, docs[i].doc_id);
    EXPECT_EQ(back[i].tokens, docs[i].tokens);
    ASSERT_EQ(back[i].mentions.size(), docs[i].mentions.size());
    for (std::size_t m = 0; m < docs[i].mentions.size(); ++m) {
      EXPECT_EQ(back[i].mentions[m].entity_id, docs[i].mentions[m].entity_id);
      EXPECT_EQ(back[i].mentions[m].start, docs[i].mentions[m].start);
      EXPECT_EQ(back[i].mentions[m].end, docs[i].mentions[m].end);
    }
  }
}

TEST(Formats, QueriesAndQrels) {
  std::istringstream q(
      "{\"query_id\":\"q1\",\"terms\":[{\"text\":\"Violin Maker\",\"required\":true},{\"text\":\"italy\"}],"
      "\"target_type\":\"person\"}\n"
      "{\"query_id\":\"q2\",\"terms\":[{\"text\":\"bow\",\"required\":false},{\"text\":\"bow\"}]}\n");
  auto queries = read_queries(q);
  ASSERT_EQ(queries.size(), 2u);
  EXPECT_EQ(queries[0].terms[0].words, (std::vector<std::string>{"violin", "maker"}));
  EXPECT_TRUE(queries[0].terms[0].required);
  EXPECT_EQ(queries[0].target_type.value_or(""), "person");
  ASSERT_EQ(queries[1].terms.size(), 1u);
  EXPECT_EQ(queries[1].terms[0].count, 2);

  std::istringstream r("q1 0 e1 1\nq1 0 e2 0\nq2 0 e3 1\n");
  auto j = read_qrels(r);
  EXPECT_EQ(j.at("q1").good, (std::set<std::string>{"e1"}));
  EXPECT_EQ(j.at("q1").bad, (std::set<std::string>{"e2"}));
  std::ostringstream out;
  write_qrels(out, j);
  std::istringstream again(out.str());
  auto j2 = read_qrels(again);
  EXPECT_EQ(j2.at("q2").good, j.at("q2").good);

  std::istringstream bad_rel("q1 0 e1 2\n");
  EXPECT_THROW(read_qrels(bad_rel), FormatError);
  std::istringstream conflict("q1 0 e1 1\nq1 0 e1 0\n");
  EXPECT_THROW(read_qrels(conflict), FormatError);
  std::istringstream dup_q("{\"query_id\":\"q\",\"terms\":[{\"text\":\"a\"}]}\n{\"query_id\":\"q\",\"terms\":[{\"text\":\"b\"}]}\n");
  EXPECT_THROW(read_queries(dup_q), FormatError);
}

TEST(Context, MinimumDistanceWins) {
  //                 0    1    2    3    4    5   6   7   8   9    10
  auto index = CorpusIndex::build({doc("a", "bow x x x x x x ent x x bow", {{"e", 7, 8}})});
  auto q = make_query("q", {{"bow", false}});
  auto ctx = extract_context(index, 0, 0, q, 50);
  ASSERT_TRUE(ctx);
  EXPECT_EQ(ctx->matches[0], 3u);
  EXPECT_FALSE(extract_context(index, 0, 0, q, 2));
}

TEST(Context, DistanceIsMeasuredFromNearestMentionEdge) {
  EXPECT_EQ(mention_distance(10, 1, 4, 7), 4u);
  EXPECT_EQ(mention_distance(1, 1, 4, 7), 3u);
  EXPECT_EQ(mention_distance(3, 1, 4, 7), 1u);
  EXPECT_EQ(mention_distance(5, 1, 4, 7), 1u);  // inside the span
  EXPECT_EQ(mention_distance(1, 2, 4, 7), 2u);  // phrase ending at 2
}

TEST(Context, PerTermDistancesMatchExhaustiveScan) {
  auto docs = fixture_corpus(3);
  auto index = CorpusIndex::build(docs);
  auto q = make_query("q", {{"violin", false}, {"wood bow", false}, {"italy", false}});
  for (std::uint32_t d = 0; d < index.num_docs(); ++d) {
    const auto& document = index.document(d);
    for (std::uint32_t m = 0; m < document.mentions.size(); ++m) {
      for (std::uint32_t window : {3u, 8u, 50u}) {
        auto ctx = extract_context(index, d, m, q, window);
        bool any = false;
        for (std::size_t t = 0; t < q.terms.size(); ++t) {
          std::optional<std::uint32_t> best;
          const auto len = static_cast<std::uint32_t>(q.terms[t].words.size());
          for (auto p : brute_occurrences(document, q.terms[t])) {
            auto dist = brute_distance(p, len, document.mentions[m]);
            if (dist <= window && (!best || dist < *best)) best = dist;
          }
          any = any || best.has_value();
          if (ctx) {
            EXPECT_EQ(ctx->matches[t], best);
          }
        }
        EXPECT_EQ(ctx.has_value(), any);
      }
    }
  }
}

TEST(Candidates, AbsentTermGivesNoCandidates) {
  auto index = CorpusIndex::build(fixture_corpus());
  EXPECT_TRUE(find_candidates(index, make_query("q", {{"trumpet", false}})).empty());
}

TEST(Candidates, SingleMentionSingleMatch) {
  auto index = CorpusIndex::build({doc("a", "x bow x x ent", {{"e", 4, 5}})});
  auto c = find_candidates(index, make_query("q", {{"bow", false}}));
  ASSERT_EQ(c.size(), 1u);
  ASSERT_EQ(c.support.at("e").size(), 1u);
  EXPECT_EQ(c.support.at("e")[0].matches[0], 3u);
}

TEST(Candidates, PerMentionMatchesNestedLoopScan) {
  auto docs = fixture_corpus(5);
  auto index = CorpusIndex::build(docs);
  auto q = make_query("q", {{"violin", false}, {"italy", true}, {"string bow", false}});
  for (std::uint32_t window : {2u, 5u, 50u}) {
    auto c = find_candidates(index, q, {window, Granularity::PerMention});
    // Oracle: (doc id, mention start, entity) triples.
    std::set<std::tuple<std::string, std::uint32_t, std::string>> expected, got;
    for (const auto& d : docs) {
      bool has_required = false;
      for (const auto& t : d.tokens) has_required = has_required || t == "italy";
      if (!has_required) continue;
      for (const auto& m : d.mentions) {
        bool hit = false;
        for (const auto& term : q.terms)
          for (auto p : brute_occurrences(d, term))
            hit = hit || brute_distance(p, static_cast<std::uint32_t>(term.words.size()), m) <= window;
        if (hit) expected.emplace(d.doc_id, m.start, m.entity_id);
      }
    }
    std::size_t contexts = 0;
    for (const auto& [e, s] : c.support)
      for (const auto& ctx : s) {
        got.emplace(index.document(ctx.doc).doc_id, ctx.mention_start, e);
        ++contexts;
      }
    EXPECT_EQ(got, expected) << "window " << window;
    // Duplicate mentions (same entity, same start) collapse in the set only.
    EXPECT_GE(contexts, expected.size());
  }
}

TEST(Candidates, BestPerDocumentKeepsOneContextPerDocument) {
  auto index = CorpusIndex::build(fixture_corpus(5));
  auto q = make_query("q", {{"violin", false}, {"bow", false}});
  auto per = find_candidates(index, q, {10, Granularity::PerMention});
  auto best = find_candidates(index, q, {10, Granularity::BestPerDocument});
  ASSERT_EQ(per.size(), best.size());
  for (const auto& [e, s] : best.support) {
    std::set<std::uint32_t> docs;
    for (const auto& ctx : s) EXPECT_TRUE(docs.insert(ctx.doc).second);
    std::set<std::uint32_t> per_docs;
    for (const auto& ctx : per.support.at(e)) per_docs.insert(ctx.doc);
    EXPECT_EQ(docs, per_docs);
  }
}

TEST(Candidates, BestPerDocumentPrefersMoreMatchedIdfThenCloser) {
  //                                0     1   2   3   4    5   6   7   8
  auto index = CorpusIndex::build({doc("a", "rare ent x x common ent x x ent",
                                       {{"e", 1, 2}, {"e", 5, 6}, {"e", 8, 9}}),
                                   doc("b", "common"), doc("c", "common")});
  auto q = make_query("q", {{"rare", false}, {"common", false}});
  auto c = find_candidates(index, q, {3, Granularity::BestPerDocument});
  ASSERT_EQ(c.support.at("e").size(), 1u);
  EXPECT_EQ(c.support.at("e")[0].mention_start, 1u);
}

TEST(Candidates, RequiredTermsAndTypeFilter) {
  EntityCatalog catalog{{"p", {"person"}}, {"o", {"organization"}}};
  auto index = CorpusIndex::build(
      {doc("a", "bow p o", {{"p", 1, 2}, {"o", 2, 3}}), doc("b", "bow violin p", {{"p", 2, 3}})}, catalog);
  auto typed = make_query("q", {{"bow", false}}, "person");
  auto c = find_candidates(index, typed);
  EXPECT_EQ(c.size(), 1u);
  EXPECT_EQ(c.support.at("p").size(), 2u);
  auto required = make_query("q", {{"bow", false}, {"violin", true}});
  auto r = find_candidates(index, required);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r.support.at("p").size(), 1u);
  // Without a catalog the type is ignored.
  auto plain = CorpusIndex::build({doc("a", "bow p o", {{"p", 1, 2}, {"o", 2, 3}})});
  EXPECT_EQ(find_candidates(plain, typed).size(), 2u);
}
