#pragma once

// Context feature families: whole-document scores (NoProx), cumulative IDF
// up to a distance (IdfUpto), perplexity x proximity grid cells, and their
// rectangle encoding. All emitted values are non-negative.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "corpus.hpp"

namespace entrank {

/// Sparse non-negative feature map, entries kept sorted by index.
class FeatureVector {
 public:
  using Entry = std::pair<std::uint32_t, double>;

  FeatureVector() = default;
  explicit FeatureVector(std::vector<Entry> entries) {
    for (const auto& [i, v] : entries) add(i, v);
  }

  void add(std::uint32_t index, double value) {
    if (value < 0.0 || std::isnan(value))
      throw std::invalid_argument("negative feature value at index " + std::to_string(index));
    auto it = std::lower_bound(entries_.begin(), entries_.end(), index,
                               [](const Entry& e, std::uint32_t i) { return e.first < i; });
    if (it != entries_.end() && it->first == index)
      it->second += value;
    else
      entries_.insert(it, Entry{index, value});
  }

  double get(std::uint32_t index) const {
    auto it = std::lower_bound(entries_.begin(), entries_.end(), index,
                               [](const Entry& e, std::uint32_t i) { return e.first < i; });
    return it != entries_.end() && it->first == index ? it->second : 0.0;
  }

  double dot(std::span<const double> w) const {
    double s = 0.0;
    for (const auto& [i, v] : entries_) s += w[i] * v;
    return s;
  }

  /// out += scale * this
  void axpy(double scale, std::span<double> out) const {
    for (const auto& [i, v] : entries_) out[i] += scale * v;
  }

  std::uint32_t max_index_plus_one() const { return entries_.empty() ? 0 : entries_.back().first + 1; }
  const std::vector<Entry>& entries() const& { return entries_; }
  std::vector<Entry> entries() && { return std::move(entries_); }
  std::size_t nnz() const { return entries_.size(); }
  bool operator==(const FeatureVector&) const = default;

 private:
  std::vector<Entry> entries_;
};

/// Which families are active, their bucket boundaries and index offsets.
/// Index order: pad, NoProx (BM25, cosine), IdfUpto, grid, rectangle.
/// The voting family is entity-level and occupies indices 0..6 on its own.
struct FeatureLayout {
  bool pad = true;
  bool noprox = false;
  bool idfupto = false;
  bool grid = false;
  bool rectangle = false;
  bool voting = false;  // entity-level voting aggregates; excludes every other family
  std::vector<std::uint32_t> distance_bounds{2, 4, 8, 16, 32, 50};
  std::vector<double> idf_bounds{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};

  static constexpr std::uint32_t kNoProxWidth = 2;
  static constexpr std::uint32_t kVotingWidth = 7;

  std::uint32_t rows() const { return static_cast<std::uint32_t>(idf_bounds.size()); }
  std::uint32_t cols() const { return static_cast<std::uint32_t>(distance_bounds.size()); }
  std::uint32_t cells() const { return rows() * cols(); }

  std::uint32_t pad_offset() const { return 0; }
  std::uint32_t noprox_offset() const { return pad ? 1 : 0; }
  std::uint32_t idfupto_offset() const { return noprox_offset() + (noprox ? kNoProxWidth : 0); }
  std::uint32_t grid_offset() const { return idfupto_offset() + (idfupto ? cols() : 0); }
  std::uint32_t rectangle_offset() const { return grid_offset() + (grid ? cells() : 0); }
  std::uint32_t dimension() const {
    return voting ? kVotingWidth : rectangle_offset() + (rectangle ? cells() : 0);
  }

  bool has_proximity() const { return idfupto || grid || rectangle; }
  bool context_level() const { return !voting; }

  void validate() const {
    if (voting && (pad || noprox || idfupto || grid || rectangle))
      throw std::invalid_argument("voting layout cannot be combined with context families");
    if (!(voting || pad || noprox || idfupto || grid || rectangle))
      throw std::invalid_argument("feature layout has no active family");
    if (distance_bounds.empty() || idf_bounds.empty())
      throw std::invalid_argument("feature layout needs non-empty bucket boundaries");
    for (std::size_t k = 1; k < distance_bounds.size(); ++k)
      if (distance_bounds[k] <= distance_bounds[k - 1])
        throw std::invalid_argument("distance boundaries must be strictly increasing");
    for (std::size_t k = 0; k < idf_bounds.size(); ++k) {
      if (idf_bounds[k] <= 0.0 || idf_bounds[k] > 1.0)
        throw std::invalid_argument("IDF-fraction boundaries must lie in (0, 1]");
      if (k && idf_bounds[k] <= idf_bounds[k - 1])
        throw std::invalid_argument("IDF-fraction boundaries must be strictly increasing");
    }
  }

  /// Parses a comma-separated family list such as "noprox,rectangle".
  /// "pad" turns the constant feature on; "nopad" turns it off.
  static FeatureLayout parse(const std::string& spec) {
    FeatureLayout layout;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item == "pad") layout.pad = true;
      else if (item == "nopad") layout.pad = false;
      else if (item == "noprox") layout.noprox = true;
      else if (item == "idfupto") layout.idfupto = true;
      else if (item == "grid") layout.grid = true;
      else if (item == "rect" || item == "rectangle") layout.rectangle = true;
      else if (item == "voting") layout.voting = true, layout.pad = false;
      else if (!item.empty()) throw std::invalid_argument("unknown feature family '" + item + "'");
    }
    layout.validate();
    return layout;
  }

  std::string families() const {
    std::string out;
    auto add = [&](const char* s) { out += out.empty() ? s : std::string(",") + s; };
    if (voting) return "voting";
    add(pad ? "pad" : "nopad");
    if (noprox) add("noprox");
    if (idfupto) add("idfupto");
    if (grid) add("grid");
    if (rectangle) add("rect");
    return out;
  }

  bool operator==(const FeatureLayout&) const = default;
};

/// Row of a matched term: bucket of IDF(t)/IDF(q); higher row = rarer term.
inline std::uint32_t idf_row(const FeatureLayout& layout, double fraction) {
  for (std::uint32_t k = 0; k < layout.rows(); ++k)
    if (fraction <= layout.idf_bounds[k]) return k;
  return layout.rows() - 1;
}

/// Column of a match at distance l; higher column = closer. Distances past
/// the last boundary fall into the farthest bucket (column 0).
inline std::uint32_t proximity_col(const FeatureLayout& layout, std::uint32_t distance) {
  std::uint32_t bucket = layout.cols() - 1;
  for (std::uint32_t k = 0; k < layout.cols(); ++k) {
    if (distance <= layout.distance_bounds[k]) {
      bucket = k;
      break;
    }
  }
  return layout.cols() - 1 - bucket;
}

// ---------------------------------------------------------------------------
// NoProx

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

inline double bm25_idf(std::size_t num_docs, std::size_t df) {
  const double n = static_cast<double>(num_docs), f = static_cast<double>(df);
  return std::log(1.0 + (n - f + 0.5) / (f + 0.5));
}

/// Okapi BM25 of a whole document; phrases count as single terms.
inline double bm25(const CorpusIndex& index, std::uint32_t doc, const Query& query,
                   const Bm25Params& params = {}) {
  const double dl = static_cast<double>(index.doc_length(doc));
  const double avgdl = index.average_doc_length();
  const double norm = params.k1 * (1.0 - params.b + params.b * (avgdl > 0 ? dl / avgdl : 0.0));
  double score = 0.0;
  for (const auto& t : query.terms) {
    const double tf = static_cast<double>(index.occurrences(doc, t).size());
    if (tf == 0.0) continue;
    const auto stats = index.term_stats(t);
    score += t.count * bm25_idf(index.num_docs(), stats.df) * tf * (params.k1 + 1.0) / (tf + norm);
  }
  return score;
}

/// TF-IDF cosine between a document and the bag of query words.
inline double tfidf_cosine(const CorpusIndex& index, std::uint32_t doc, const Query& query) {
  const auto& tokens = index.document(doc).tokens;
  if (tokens.empty() || index.num_docs() == 0) return 0.0;
  std::unordered_map<std::string_view, double> tf;
  for (const auto& tok : tokens) tf[tok] += 1.0;
  std::unordered_map<std::string_view, double> qtf;
  for (const auto& t : query.terms)
    for (const auto& w : t.words) qtf[w] += t.count;

  auto idf = [&](std::string_view w) { return compute_idf(index, w); };
  double dnorm = 0.0;
  for (const auto& [w, c] : tf) dnorm += (c * idf(w)) * (c * idf(w));
  double qnorm = 0.0, dot = 0.0;
  for (const auto& [w, c] : qtf) {
    const double i = idf(w);
    qnorm += (c * i) * (c * i);
    if (auto it = tf.find(w); it != tf.end()) dot += (it->second * i) * (c * i);
  }
  if (dnorm == 0.0 || qnorm == 0.0) return 0.0;
  return std::min(1.0, dot / (std::sqrt(dnorm) * std::sqrt(qnorm)));
}

/// Document-level features: BM25, cosine and the constant pad, at the
/// layout's offsets.
inline FeatureVector document_scores(const CorpusIndex& index, std::uint32_t doc,
                                     const Query& query, const FeatureLayout& layout,
                                     const Bm25Params& params = {}) {
  FeatureVector fv;
  if (layout.pad) fv.add(layout.pad_offset(), 1.0);
  if (layout.noprox) {
    if (double s = bm25(index, doc, query, params); s > 0) fv.add(layout.noprox_offset(), s);
    if (double c = tfidf_cosine(index, doc, query); c > 0) fv.add(layout.noprox_offset() + 1, c);
  }
  return fv;
}

// ---------------------------------------------------------------------------
// Proximity families

/// One value per distance boundary L: fraction of query IDF matched within L.
inline FeatureVector idfupto_features(const Context& ctx, const QueryIdf& idf,
                                      const FeatureLayout& layout) {
  FeatureVector fv;
  const auto base = layout.idfupto_offset();
  for (std::uint32_t k = 0; k < layout.cols(); ++k) {
    double matched = 0.0;
    for (std::size_t t = 0; t < ctx.matches.size(); ++t)
      if (ctx.matches[t] && *ctx.matches[t] <= layout.distance_bounds[k]) matched += idf.term[t];
    if (matched > 0.0) fv.add(base + k, std::min(1.0, matched / idf.total));
  }
  return fv;
}

inline FeatureVector grid_features(const Context& ctx, const QueryIdf& idf,
                                   const FeatureLayout& layout) {
  FeatureVector fv;
  const auto base = layout.grid_offset();
  for (std::size_t t = 0; t < ctx.matches.size(); ++t) {
    if (!ctx.matches[t]) continue;
    const auto i = idf_row(layout, idf.fraction(t));
    const auto j = proximity_col(layout, *ctx.matches[t]);
    fv.add(base + i * layout.cols() + j, 1.0);
  }
  return fv;
}

/// Each match at cell (i, j) also fires every cell with lower IDF or worse
/// proximity, i.e. all (i', j') with i' <= i and j' <= j. Counts add up.
inline FeatureVector rectangle_features(const Context& ctx, const QueryIdf& idf,
                                        const FeatureLayout& layout) {
  std::vector<double> cells(layout.cells(), 0.0);
  for (std::size_t t = 0; t < ctx.matches.size(); ++t) {
    if (!ctx.matches[t]) continue;
    const auto i = idf_row(layout, idf.fraction(t));
    const auto j = proximity_col(layout, *ctx.matches[t]);
    for (std::uint32_t a = 0; a <= i; ++a)
      for (std::uint32_t b = 0; b <= j; ++b) cells[a * layout.cols() + b] += 1.0;
  }
  FeatureVector fv;
  const auto base = layout.rectangle_offset();
  for (std::uint32_t c = 0; c < cells.size(); ++c)
    if (cells[c] > 0.0) fv.add(base + c, cells[c]);
  return fv;
}

namespace detail {
inline void append(FeatureVector& into, const FeatureVector& part) {
  for (const auto& [i, v] : part.entries()) into.add(i, v);
}
}  // namespace detail

/// f_q(x, e) for a context: every active family at its offset.
inline FeatureVector build_feature_vector(const CorpusIndex& index, const Context& ctx,
                                          const Query& query, const QueryIdf& idf,
                                          const FeatureLayout& layout,
                                          const Bm25Params& params = {}) {
  if (layout.voting) throw std::invalid_argument("voting layout is entity-level");
  if (ctx.matches.size() != query.terms.size())
    throw std::invalid_argument("context was extracted for a different query");
  FeatureVector fv = document_scores(index, ctx.doc, query, layout, params);
  if (layout.idfupto) detail::append(fv, idfupto_features(ctx, idf, layout));
  if (layout.grid) detail::append(fv, grid_features(ctx, idf, layout));
  if (layout.rectangle) detail::append(fv, rectangle_features(ctx, idf, layout));
  if (fv.max_index_plus_one() > layout.dimension())
    throw std::logic_error("feature index outside layout");
  return fv;
}

/// Whole-document feature vector. Only document-level families apply.
inline FeatureVector build_feature_vector(const CorpusIndex& index, std::uint32_t doc,
                                          const Query& query, const FeatureLayout& layout,
                                          const Bm25Params& params = {}) {
  if (layout.has_proximity())
    throw std::invalid_argument("layout '" + layout.families() +
                                "' has proximity families; a document has no mention to anchor them");
  return document_scores(index, doc, query, layout, params);
}

}  // namespace entrank
