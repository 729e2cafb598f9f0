#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "hgdoc/features/config.hpp"
#include "hgdoc/features/document.hpp"

// Corpus files hold one JSON document per line:
// {"format_version":1,"page_w":..,"page_h":..,"words":[{"id":..,"box":[x0,y0,x1,y1]}],
//  "segments":[{"start":..,"end":..,"box":[..],"label":..?}],"links":[[i,j]]}
namespace hgdoc {

namespace detail {
inline nlohmann::json box_json(const Box& b) { return nlohmann::json::array({b.x0, b.y0, b.x1, b.y1}); }
inline Box box_from(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4) throw std::runtime_error("corpus: box must have 4 integers");
  return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
}
}  // namespace detail

inline nlohmann::json document_to_json(const DocumentSample& doc) {
  nlohmann::json words = nlohmann::json::array();
  for (const auto& w : doc.words) words.push_back({{"id", w.id}, {"box", detail::box_json(w.box)}});
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& s : doc.segments) {
    nlohmann::json js{{"start", s.start}, {"end", s.end}, {"box", detail::box_json(s.box)}};
    if (s.label) js["label"] = *s.label;
    segs.push_back(std::move(js));
  }
  nlohmann::json links = nlohmann::json::array();
  for (auto [i, j] : doc.links) links.push_back({i, j});
  return {{"format_version", kFormatVersion}, {"page_w", doc.page_w}, {"page_h", doc.page_h},
          {"words", words},                  {"segments", segs},      {"links", links}};
}

inline DocumentSample document_from_json(const nlohmann::json& j) {
  const int version = j.value("format_version", 0);
  if (version != kFormatVersion) {
    throw std::runtime_error("corpus: unsupported format_version " + std::to_string(version));
  }
  DocumentSample doc;
  doc.page_w = j.at("page_w").get<int>();
  doc.page_h = j.at("page_h").get<int>();
  for (const auto& w : j.at("words")) doc.words.push_back({w.at("id").get<int>(), detail::box_from(w.at("box"))});
  for (const auto& s : j.at("segments")) {
    Segment seg;
    seg.start = s.at("start").get<std::size_t>();
    seg.end = s.at("end").get<std::size_t>();
    seg.box = detail::box_from(s.at("box"));
    if (s.contains("label") && !s["label"].is_null()) seg.label = s["label"].get<int>();
    doc.segments.push_back(seg);
  }
  for (const auto& l : j.value("links", nlohmann::json::array())) {
    doc.links.emplace_back(l.at(0).get<std::size_t>(), l.at(1).get<std::size_t>());
  }
  doc.sentence_order = reading_order(doc.segments);
  doc.validate();
  return doc;
}

inline void write_corpus(const std::vector<DocumentSample>& docs, std::ostream& out) {
  for (const auto& d : docs) out << document_to_json(d).dump() << '\n';
}

inline void save_corpus(const std::vector<DocumentSample>& docs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write corpus " + path);
  write_corpus(docs, out);
}

inline std::vector<DocumentSample> read_corpus(std::istream& in) {
  std::vector<DocumentSample> docs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      docs.push_back(document_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error("corpus line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return docs;
}

inline std::vector<DocumentSample> load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus " + path);
  return read_corpus(in);
}

}  // namespace hgdoc
