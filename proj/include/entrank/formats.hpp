#pragma once

// Line-delimited JSON readers/writers for corpora, entity catalogs and
// queries, plus TREC-style qrels.
//
//   corpus:  {"doc_id": "d1", "tokens": ["a", ...],
//             "mentions": [{"entity_id": "e1", "start": 3, "end": 4}, ...]}
//   catalog: {"entity_id": "e1", "types": ["person", ...]}
//   queries: {"query_id": "q1", "target_type": "person",
//             "terms": [{"text": "chicken pox", "required": true}, ...]}
//   qrels:   query_id 0 entity_id rel        (rel in {0, 1})

#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "corpus.hpp"

namespace entrank {

namespace detail {

template <class Fn>
void for_each_record(std::istream& in, Fn&& fn) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(std::string("malformed JSON: ") + e.what(), lineno);
    }
    if (!record.is_object()) throw FormatError("record is not an object", lineno);
    try {
      fn(record, lineno);
    } catch (const FormatError&) {
      throw;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("bad record: ") + e.what(), lineno);
    }
  }
}

}  // namespace detail

inline std::vector<Document> read_documents(std::istream& in) {
  std::vector<Document> docs;
  std::set<std::string> seen;
  detail::for_each_record(in, [&](const nlohmann::json& r, std::size_t lineno) {
    Document d;
    d.doc_id = r.at("doc_id").get<std::string>();
    if (!seen.insert(d.doc_id).second)
      throw FormatError("duplicate doc_id '" + d.doc_id + "'", lineno);
    d.tokens = r.at("tokens").get<std::vector<std::string>>();
    if (r.contains("mentions")) {
      for (const auto& m : r.at("mentions")) {
        const auto start = m.at("start").get<long long>();
        const auto end = m.at("end").get<long long>();
        if (start < 0 || end <= start || end > static_cast<long long>(d.tokens.size()))
          throw FormatError("mention span [" + std::to_string(start) + "," +
                                std::to_string(end) + ") out of bounds",
                            lineno);
        d.mentions.push_back(Mention{m.at("entity_id").get<std::string>(),
                                     static_cast<std::uint32_t>(start),
                                     static_cast<std::uint32_t>(end)});
      }
    }
    docs.push_back(std::move(d));
  });
  return docs;
}

inline EntityCatalog read_catalog(std::istream& in) {
  EntityCatalog catalog;
  detail::for_each_record(in, [&](const nlohmann::json& r, std::size_t) {
    auto& types = catalog[r.at("entity_id").get<std::string>()];
    for (const auto& t : r.at("types")) types.push_back(t.get<std::string>());
  });
  return catalog;
}

/// Parses and indexes a corpus stream, with an optional entity catalog.
inline CorpusIndex ingest_corpus(std::istream& docs, std::istream* catalog = nullptr) {
  auto documents = read_documents(docs);
  return CorpusIndex::build(std::move(documents), catalog ? read_catalog(*catalog) : EntityCatalog{});
}

inline std::vector<Query> read_queries(std::istream& in) {
  std::vector<Query> queries;
  std::set<std::string> seen;
  detail::for_each_record(in, [&](const nlohmann::json& r, std::size_t lineno) {
    std::vector<std::pair<std::string, bool>> terms;
    for (const auto& t : r.at("terms"))
      terms.emplace_back(t.at("text").get<std::string>(), t.value("required", false));
    std::optional<std::string> type;
    if (r.contains("target_type") && !r.at("target_type").is_null())
      type = r.at("target_type").get<std::string>();
    auto id = r.at("query_id").get<std::string>();
    if (!seen.insert(id).second) throw FormatError("duplicate query_id '" + id + "'", lineno);
    try {
      queries.push_back(make_query(std::move(id), terms, std::move(type)));
    } catch (const FormatError& e) {
      throw FormatError(e.what(), lineno);
    }
  });
  return queries;
}

inline Judgments read_qrels(std::istream& in) {
  Judgments out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream fields(line);
    std::string qid, iter, eid, extra;
    int rel = -1;
    if (!(fields >> qid)) continue;
    if (!(fields >> iter >> eid >> rel) || (fields >> extra))
      throw FormatError("expected 'query_id 0 entity_id rel'", lineno);
    if (rel != 0 && rel != 1) throw FormatError("relevance must be 0 or 1", lineno);
    auto& j = out[qid];
    auto& mine = rel ? j.good : j.bad;
    const auto& other = rel ? j.bad : j.good;
    if (other.count(eid))
      throw FormatError("entity '" + eid + "' judged both good and bad for " + qid, lineno);
    mine.insert(eid);
  }
  return out;
}

inline void write_document(std::ostream& out, const Document& d) {
  nlohmann::json mentions = nlohmann::json::array();
  for (const auto& m : d.mentions)
    mentions.push_back({{"entity_id", m.entity_id}, {"start", m.start}, {"end", m.end}});
  nlohmann::json r = {{"doc_id", d.doc_id}, {"tokens", d.tokens}, {"mentions", mentions}};
  out << r.dump() << '\n';
}

inline void write_query(std::ostream& out, const Query& q) {
  nlohmann::json terms = nlohmann::json::array();
  for (const auto& t : q.terms)
    for (int k = 0; k < t.count; ++k) terms.push_back({{"text", t.text()}, {"required", t.required}});
  nlohmann::json r = {{"query_id", q.query_id}, {"terms", terms}};
  if (q.target_type) r["target_type"] = *q.target_type;
  out << r.dump() << '\n';
}

inline void write_catalog(std::ostream& out, const EntityCatalog& catalog) {
  for (const auto& [id, types] : catalog)
    out << nlohmann::json{{"entity_id", id}, {"types", types}}.dump() << '\n';
}

inline void write_qrels(std::ostream& out, const Judgments& judgments) {
  for (const auto& [qid, j] : judgments) {
    for (const auto& e : j.good) out << qid << " 0 " << e << " 1\n";
    for (const auto& e : j.bad) out << qid << " 0 " << e << " 0\n";
  }
}

}  // namespace entrank
