#pragma once

// Annotated corpus, term statistics and candidate-entity retrieval.
//
// Documents arrive pre-tokenized with entity mentions already annotated as
// token spans. The index is built once and is read-only afterwards; the only
// mutable state is the phrase-statistics cache, which is guarded by a mutex
// so concurrent readers are safe.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

namespace entrank {

/// Raised for malformed input records; carries the 1-based line number when
/// the record came from a line-delimited file (0 otherwise).
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

struct Mention {
  std::string entity_id;
  std::uint32_t start = 0;  // inclusive
  std::uint32_t end = 0;    // exclusive
};

struct Document {
  std::string doc_id;
  std::vector<std::string> tokens;
  std::vector<Mention> mentions;
};

/// A single query word or a phrase of consecutive words.
struct QueryTerm {
  std::vector<std::string> words;
  bool required = false;
  int count = 1;  // n(t,q)

  std::string text() const {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (i) out += ' ';
      out += words[i];
    }
    return out;
  }
  bool is_phrase() const { return words.size() > 1; }
};

struct Query {
  std::string query_id;
  std::vector<QueryTerm> terms;  // distinct; repeats folded into count
  std::optional<std::string> target_type;
};

/// Builds a query from raw (text, required) pairs. Text is lowercased and
/// split on whitespace into phrase words; repeated terms are merged, adding
/// to their multiplicity.
inline Query make_query(std::string query_id,
                        const std::vector<std::pair<std::string, bool>>& raw_terms,
                        std::optional<std::string> target_type = std::nullopt) {
  Query q{std::move(query_id), {}, std::move(target_type)};
  for (const auto& [text, required] : raw_terms) {
    QueryTerm term;
    std::string word;
    for (char c : to_lower(text)) {
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!word.empty()) term.words.push_back(std::move(word));
        word.clear();
      } else {
        word += c;
      }
    }
    if (!word.empty()) term.words.push_back(std::move(word));
    if (term.words.empty()) throw FormatError("query " + q.query_id + ": empty term");
    term.required = required;
    auto it = std::find_if(q.terms.begin(), q.terms.end(),
                           [&](const QueryTerm& t) { return t.words == term.words; });
    if (it != q.terms.end()) {
      it->count += 1;
      it->required = it->required || required;
    } else {
      q.terms.push_back(std::move(term));
    }
  }
  if (q.terms.empty()) throw FormatError("query " + q.query_id + ": no terms");
  return q;
}

struct QueryJudgment {
  std::set<std::string> good;
  std::set<std::string> bad;
};

/// Binary relevance judgments keyed by query id.
using Judgments = std::map<std::string, QueryJudgment>;

/// Entity id -> type labels.
using EntityCatalog = std::map<std::string, std::vector<std::string>>;

struct Posting {
  std::uint32_t doc = 0;
  std::vector<std::uint32_t> positions;
};

struct EntityRef {
  std::uint32_t doc = 0;
  std::uint32_t mention = 0;
};

struct PhraseStats {
  std::size_t df = 0;
  std::uint64_t cf = 0;
};

class CorpusIndex {
 public:
  CorpusIndex() = default;
  CorpusIndex(CorpusIndex&&) noexcept = default;
  CorpusIndex& operator=(CorpusIndex&&) noexcept = default;

  /// Builds the index. Documents are stored sorted by doc_id so that every
  /// derived structure is independent of the input order. Tokens are
  /// lowercased; nothing else is normalized.
  static CorpusIndex build(std::vector<Document> docs, EntityCatalog catalog = {}) {
    CorpusIndex index;
    std::sort(docs.begin(), docs.end(),
              [](const Document& a, const Document& b) { return a.doc_id < b.doc_id; });
    for (std::size_t i = 1; i < docs.size(); ++i) {
      if (docs[i].doc_id == docs[i - 1].doc_id)
        throw FormatError("duplicate doc_id '" + docs[i].doc_id + "'");
    }
    for (auto& d : docs) {
      for (auto& t : d.tokens) t = to_lower(t);
      for (const auto& m : d.mentions) {
        if (!(m.start < m.end) || m.end > d.tokens.size())
          throw FormatError("document '" + d.doc_id + "': mention of '" + m.entity_id +
                            "' span [" + std::to_string(m.start) + "," +
                            std::to_string(m.end) + ") out of bounds");
      }
    }
    index.docs_ = std::move(docs);
    index.catalog_ = std::move(catalog);
    index.has_catalog_ = !index.catalog_.empty();
    index.doc_lengths_.reserve(index.docs_.size());
    for (std::uint32_t d = 0; d < index.docs_.size(); ++d) {
      const auto& doc = index.docs_[d];
      index.doc_lengths_.push_back(doc.tokens.size());
      index.collection_length_ += doc.tokens.size();
      for (std::uint32_t p = 0; p < doc.tokens.size(); ++p) {
        auto& entry = index.terms_[doc.tokens[p]];
        if (entry.postings.empty() || entry.postings.back().doc != d)
          entry.postings.push_back(Posting{d, {}});
        entry.postings.back().positions.push_back(p);
        entry.cf += 1;
      }
      for (std::uint32_t m = 0; m < doc.mentions.size(); ++m)
        index.entities_[doc.mentions[m].entity_id].push_back(EntityRef{d, m});
    }
    index.doc_ids_.reserve(index.docs_.size());
    for (std::uint32_t d = 0; d < index.docs_.size(); ++d)
      index.doc_ids_.emplace(index.docs_[d].doc_id, d);
    return index;
  }

  std::size_t num_docs() const { return docs_.size(); }
  const std::vector<Document>& documents() const { return docs_; }
  const Document& document(std::uint32_t d) const { return docs_.at(d); }
  std::size_t doc_length(std::uint32_t d) const { return doc_lengths_.at(d); }
  std::uint64_t collection_length() const { return collection_length_; }
  double average_doc_length() const {
    return docs_.empty() ? 0.0
                         : static_cast<double>(collection_length_) / static_cast<double>(docs_.size());
  }
  std::size_t vocabulary_size() const { return terms_.size(); }

  std::optional<std::uint32_t> find_doc(std::string_view doc_id) const {
    auto it = doc_ids_.find(std::string(doc_id));
    if (it == doc_ids_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t df(std::string_view term) const {
    auto it = terms_.find(std::string(term));
    return it == terms_.end() ? 0 : it->second.postings.size();
  }
  std::uint64_t cf(std::string_view term) const {
    auto it = terms_.find(std::string(term));
    return it == terms_.end() ? 0 : it->second.cf;
  }

  std::span<const Posting> postings(std::string_view term) const {
    auto it = terms_.find(std::string(term));
    if (it == terms_.end()) return {};
    return it->second.postings;
  }

  /// Document and collection frequency of a word or phrase. Phrase counts
  /// are exact (consecutive-token scan) and cached.
  PhraseStats term_stats(const QueryTerm& term) const {
    if (!term.is_phrase()) return {df(term.words[0]), cf(term.words[0])};
    const std::string key = term.text();
    {
      std::lock_guard lock(*cache_mutex_);
      if (auto it = phrase_cache_.find(key); it != phrase_cache_.end()) return it->second;
    }
    PhraseStats stats;
    for (const auto& posting : postings(term.words[0])) {
      auto starts = phrase_starts(posting, term.words);
      if (!starts.empty()) {
        stats.df += 1;
        stats.cf += starts.size();
      }
    }
    std::lock_guard lock(*cache_mutex_);
    phrase_cache_.emplace(key, stats);
    return stats;
  }

  /// Start positions of every occurrence of the term in document d.
  std::vector<std::uint32_t> occurrences(std::uint32_t d, const QueryTerm& term) const {
    auto list = postings(term.words[0]);
    auto it = std::lower_bound(list.begin(), list.end(), d,
                               [](const Posting& p, std::uint32_t doc) { return p.doc < doc; });
    if (it == list.end() || it->doc != d) return {};
    if (!term.is_phrase()) return it->positions;
    return phrase_starts(*it, term.words);
  }

  /// Documents containing the term (ascending).
  std::vector<std::uint32_t> documents_with(const QueryTerm& term) const {
    std::vector<std::uint32_t> out;
    for (const auto& posting : postings(term.words[0])) {
      if (!term.is_phrase() || !phrase_starts(posting, term.words).empty())
        out.push_back(posting.doc);
    }
    return out;
  }

  std::span<const EntityRef> mentions_of(std::string_view entity_id) const {
    auto it = entities_.find(std::string(entity_id));
    if (it == entities_.end()) return {};
    return it->second;
  }
  std::size_t num_entities() const { return entities_.size(); }

  bool has_catalog() const { return has_catalog_; }
  bool entity_has_type(std::string_view entity_id, std::string_view type) const {
    auto it = catalog_.find(std::string(entity_id));
    if (it == catalog_.end()) return false;
    return std::find(it->second.begin(), it->second.end(), type) != it->second.end();
  }

 private:
  struct TermEntry {
    std::vector<Posting> postings;
    std::uint64_t cf = 0;
  };

  std::vector<std::uint32_t> phrase_starts(const Posting& first,
                                           const std::vector<std::string>& words) const {
    std::vector<std::uint32_t> out;
    const auto& tokens = docs_[first.doc].tokens;
    for (auto p : first.positions) {
      if (p + words.size() > tokens.size()) continue;
      bool ok = true;
      for (std::size_t k = 1; k < words.size() && ok; ++k) ok = tokens[p + k] == words[k];
      if (ok) out.push_back(p);
    }
    return out;
  }

  std::vector<Document> docs_;
  std::vector<std::size_t> doc_lengths_;
  std::uint64_t collection_length_ = 0;
  std::unordered_map<std::string, TermEntry> terms_;
  std::unordered_map<std::string, std::uint32_t> doc_ids_;
  std::map<std::string, std::vector<EntityRef>> entities_;
  EntityCatalog catalog_;
  bool has_catalog_ = false;

  std::unique_ptr<std::mutex> cache_mutex_ = std::make_unique<std::mutex>();
  mutable std::unordered_map<std::string, PhraseStats> phrase_cache_;
};

// ---------------------------------------------------------------------------
// IDF

/// IDF(t) = num_docs / df(t), with df floored at 1 for unseen terms.
inline double compute_idf(const CorpusIndex& index, const QueryTerm& term) {
  if (index.num_docs() == 0) throw std::domain_error("IDF undefined on an empty corpus");
  const auto df = std::max<std::size_t>(1, index.term_stats(term).df);
  return static_cast<double>(index.num_docs()) / static_cast<double>(df);
}

inline double compute_idf(const CorpusIndex& index, std::string_view word) {
  return compute_idf(index, QueryTerm{{std::string(word)}});
}

/// IDF(q): sum over the distinct query terms.
inline double compute_idf(const CorpusIndex& index, const Query& query) {
  double sum = 0.0;
  for (const auto& t : query.terms) sum += compute_idf(index, t);
  return sum;
}

/// Per-query IDF values, computed once and shared by the feature extractors.
struct QueryIdf {
  std::vector<double> term;  // aligned with Query::terms
  double total = 0.0;

  static QueryIdf compute(const CorpusIndex& index, const Query& query) {
    QueryIdf out;
    for (const auto& t : query.terms) {
      out.term.push_back(compute_idf(index, t));
      out.total += out.term.back();
    }
    return out;
  }
  double fraction(std::size_t t) const { return term[t] / total; }
};

// ---------------------------------------------------------------------------
// Contexts and candidates

enum class Granularity { PerMention, BestPerDocument };

struct RetrievalConfig {
  std::uint32_t window = 50;
  Granularity granularity = Granularity::PerMention;
};

/// One (document, entity mention) unit of support for an entity.
struct Context {
  std::uint32_t doc = 0;
  std::string entity_id;
  std::uint32_t mention_start = 0;
  std::uint32_t mention_end = 0;
  std::uint32_t mention_offset = 0;  // midpoint of the mention span
  std::uint32_t window_begin = 0;
  std::uint32_t window_end = 0;
  /// Closest in-window distance per query term (aligned with Query::terms).
  std::vector<std::optional<std::uint32_t>> matches;

  std::size_t num_matches() const {
    return static_cast<std::size_t>(
        std::count_if(matches.begin(), matches.end(), [](const auto& m) { return m.has_value(); }));
  }
};

struct CandidateSet {
  std::string query_id;
  std::map<std::string, std::vector<Context>> support;  // entity -> S_e

  std::size_t size() const { return support.size(); }
  bool empty() const { return support.empty(); }
};

/// Token distance between an occurrence [pos, pos+len) and a mention span,
/// measured from the nearest mention edge, never below 1.
inline std::uint32_t mention_distance(std::uint32_t pos, std::uint32_t len, std::uint32_t start,
                                      std::uint32_t end) {
  const std::uint32_t last = pos + len - 1;
  if (last < start) return start - last;
  if (pos >= end) return pos - (end - 1);
  return 1;
}

namespace detail {

inline std::optional<Context> context_from_occurrences(
    std::uint32_t doc_index, const Document& doc, const Mention& mention, const Query& query,
    const std::vector<std::vector<std::uint32_t>>& occurrences, std::uint32_t window) {
  Context ctx;
  ctx.doc = doc_index;
  ctx.entity_id = mention.entity_id;
  ctx.mention_start = mention.start;
  ctx.mention_end = mention.end;
  ctx.mention_offset = mention.start + (mention.end - mention.start - 1) / 2;
  ctx.window_begin = mention.start > window ? mention.start - window : 0;
  ctx.window_end = static_cast<std::uint32_t>(
      std::min<std::size_t>(doc.tokens.size(), std::size_t{mention.end} + window));
  ctx.matches.resize(query.terms.size());
  bool any = false;
  for (std::size_t t = 0; t < query.terms.size(); ++t) {
    const auto len = static_cast<std::uint32_t>(query.terms[t].words.size());
    for (auto pos : occurrences[t]) {
      const auto dist = mention_distance(pos, len, mention.start, mention.end);
      if (dist > window) continue;
      if (!ctx.matches[t] || dist < *ctx.matches[t]) ctx.matches[t] = dist;
      any = true;
    }
  }
  if (!any) return std::nullopt;
  return ctx;
}

}  // namespace detail

/// Context for one mention: per query term, the closest in-window match.
/// Returns nullopt when no query term falls inside the window.
inline std::optional<Context> extract_context(const CorpusIndex& index, std::uint32_t doc,
                                              std::uint32_t mention, const Query& query,
                                              std::uint32_t window) {
  const auto& document = index.document(doc);
  if (mention >= document.mentions.size())
    throw std::out_of_range("mention index out of range for document " + document.doc_id);
  std::vector<std::vector<std::uint32_t>> occ;
  occ.reserve(query.terms.size());
  for (const auto& t : query.terms) occ.push_back(index.occurrences(doc, t));
  return detail::context_from_occurrences(doc, document, document.mentions[mention], query, occ,
                                          window);
}

namespace detail {

// Static best-mention rule: larger matched-IDF fraction, then smaller total
// distance, then earlier mention.
inline bool better_context(const Context& a, const Context& b, const QueryIdf& idf) {
  double fa = 0, fb = 0;
  std::uint64_t la = 0, lb = 0;
  for (std::size_t t = 0; t < a.matches.size(); ++t) {
    if (a.matches[t]) fa += idf.term[t], la += *a.matches[t];
    if (b.matches[t]) fb += idf.term[t], lb += *b.matches[t];
  }
  if (fa != fb) return fa > fb;
  if (la != lb) return la < lb;
  return a.mention_offset < b.mention_offset;
}

}  // namespace detail

/// Candidate entities for a query together with their support sets.
///
/// An entity qualifies through a mention that has at least one query term
/// within the window, in a document containing every required term, and
/// (when a target type and a catalog are present) it must carry the type.
inline CandidateSet find_candidates(const CorpusIndex& index, const Query& query,
                                    const RetrievalConfig& config = {}) {
  CandidateSet out;
  out.query_id = query.query_id;
  if (index.num_docs() == 0) return out;

  std::vector<std::vector<std::uint32_t>> term_docs;
  std::set<std::uint32_t> docs;
  for (const auto& t : query.terms) {
    term_docs.push_back(index.documents_with(t));
    docs.insert(term_docs.back().begin(), term_docs.back().end());
  }
  for (std::size_t t = 0; t < query.terms.size(); ++t) {
    if (!query.terms[t].required) continue;
    std::set<std::uint32_t> keep;
    std::set_intersection(docs.begin(), docs.end(), term_docs[t].begin(), term_docs[t].end(),
                          std::inserter(keep, keep.end()));
    docs = std::move(keep);
  }
  if (docs.empty()) return out;

  const bool type_filter = query.target_type.has_value() && index.has_catalog();
  const QueryIdf idf = QueryIdf::compute(index, query);

  for (auto d : docs) {
    const auto& doc = index.document(d);
    std::vector<std::vector<std::uint32_t>> occ;
    occ.reserve(query.terms.size());
    for (const auto& t : query.terms) occ.push_back(index.occurrences(d, t));

    std::map<std::string, Context> best;  // BestPerDocument only
    for (const auto& mention : doc.mentions) {
      if (type_filter && !index.entity_has_type(mention.entity_id, *query.target_type)) continue;
      auto ctx = detail::context_from_occurrences(d, doc, mention, query, occ, config.window);
      if (!ctx) continue;
      if (config.granularity == Granularity::PerMention) {
        out.support[mention.entity_id].push_back(std::move(*ctx));
      } else {
        auto it = best.find(mention.entity_id);
        if (it == best.end())
          best.emplace(mention.entity_id, std::move(*ctx));
        else if (detail::better_context(*ctx, it->second, idf))
          it->second = std::move(*ctx);
      }
    }
    for (auto& [entity, ctx] : best) out.support[entity].push_back(std::move(ctx));
  }
  // Documents are visited in doc_id order; order mentions within a document.
  for (auto& [entity, contexts] : out.support) {
    std::stable_sort(contexts.begin(), contexts.end(), [](const Context& a, const Context& b) {
      return std::tie(a.doc, a.mention_start, a.mention_end) <
             std::tie(b.doc, b.mention_start, b.mention_end);
    });
  }
  return out;
}

}  // namespace entrank
