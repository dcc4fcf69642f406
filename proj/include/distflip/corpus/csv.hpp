#pragma once

#include <algorithm>
#include <fstream>
#include <iterator>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "distflip/corpus/sentence.hpp"

namespace distflip::corpus {

class CsvError : public std::runtime_error {
 public:
  CsvError(std::size_t line, const std::string& msg)
      : std::runtime_error("line " + std::to_string(line) + ": " + msg), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

struct CsvRecord {
  std::vector<std::string> fields;
  std::size_t line = 0;  // 1-based line on which the record starts
  std::string error;     // non-empty if the record is malformed
};

/// RFC 4180 tokenizer: comma separated, double-quote escaping, quoted fields
/// may span lines, CRLF or LF record ends.
inline std::vector<CsvRecord> parse_csv(const std::string& data) {
  std::vector<CsvRecord> out;
  std::size_t i = 0, line = 1;
  const std::size_t n = data.size();
  while (i < n) {
    CsvRecord rec;
    rec.line = line;
    std::string field;
    bool done = false;
    while (!done) {
      field.clear();
      if (i < n && data[i] == '"') {
        ++i;
        bool closed = false;
        while (i < n) {
          char c = data[i++];
          if (c == '"') {
            if (i < n && data[i] == '"') {
              field.push_back('"');
              ++i;
            } else {
              closed = true;
              break;
            }
          } else {
            if (c == '\n') ++line;
            field.push_back(c);
          }
        }
        if (!closed) rec.error = "unterminated quoted field";
        if (closed && i < n && data[i] != ',' && data[i] != '\n' && data[i] != '\r') {
          rec.error = "unexpected character after closing quote";
          while (i < n && data[i] != ',' && data[i] != '\n') field.push_back(data[i++]);
        }
      } else {
        while (i < n && data[i] != ',' && data[i] != '\n' && data[i] != '\r') {
          if (data[i] == '"' && rec.error.empty()) rec.error = "stray quote in unquoted field";
          field.push_back(data[i++]);
        }
      }
      rec.fields.push_back(field);
      if (i >= n) {
        done = true;
      } else if (data[i] == ',') {
        ++i;
      } else {
        if (data[i] == '\r') ++i;
        if (i < n && data[i] == '\n') ++i;
        ++line;
        done = true;
      }
    }
    // skip blank lines
    if (rec.fields.size() == 1 && rec.fields[0].empty() && rec.error.empty()) continue;
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

struct CsvSchema {
  std::string id_column = "id";
  std::string text_column = "comment_text";
  std::string label_column = "toxic";
};

struct IngestOptions {
  CsvSchema schema;
  TextOptions text;
  bool strict = false;
};

struct IngestSummary {
  std::size_t rows_read = 0;
  std::size_t rows_skipped = 0;
  std::size_t toxic = 0;
  std::vector<std::string> warnings;  // first few skip reasons

  std::size_t accepted() const { return rows_read - rows_skipped; }
  double toxic_fraction() const {
    return accepted() == 0 ? 0.0 : static_cast<double>(toxic) / static_cast<double>(accepted());
  }
};

struct IngestResult {
  std::vector<Sentence> sentences;
  IngestSummary summary;
};

namespace detail {

inline std::string trim(std::string s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

inline int parse_label(const std::string& raw) {
  const std::string s = trim(raw);
  if (s == "0") return 0;
  if (s == "1") return 1;
  throw std::invalid_argument("label '" + s + "' is not 0 or 1");
}

}  // namespace detail

/// Reads a header-led CSV. Extra columns are ignored; only the configured id,
/// text and label columns are used. Rows keep file order.
inline IngestResult ingest_csv_string(const std::string& data, const Vocab& vocab,
                                      const IngestOptions& opt = {}) {
  // leading '#' lines are provenance comments, dropped before tokenizing
  std::size_t start = 0, skipped_lines = 0;
  while (start < data.size() && data[start] == '#') {
    const auto nl = data.find('\n', start);
    start = nl == std::string::npos ? data.size() : nl + 1;
    ++skipped_lines;
  }
  auto records = parse_csv(data.substr(start));
  for (auto& r : records) r.line += skipped_lines;
  if (records.empty()) throw CsvError(1, "missing header row");
  const auto& header = records.front().fields;
  auto column = [&](const std::string& name) {
    auto it = std::find_if(header.begin(), header.end(),
                           [&](const std::string& h) { return detail::trim(h) == name; });
    if (it == header.end()) throw CsvError(records.front().line, "header lacks column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t id_col = column(opt.schema.id_column);
  const std::size_t text_col = column(opt.schema.text_column);
  const std::size_t label_col = column(opt.schema.label_column);

  IngestResult res;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    ++res.summary.rows_read;
    std::string why = rec.error;
    Sentence s;
    if (why.empty() && rec.fields.size() != header.size())
      why = "expected " + std::to_string(header.size()) + " fields, got " +
            std::to_string(rec.fields.size());
    if (why.empty()) {
      try {
        s = make_sentence(rec.fields[id_col], rec.fields[text_col],
                          detail::parse_label(rec.fields[label_col]), vocab, opt.text);
      } catch (const std::invalid_argument& e) {
        why = e.what();
      }
    }
    if (!why.empty()) {
      if (opt.strict) throw CsvError(rec.line, why);
      ++res.summary.rows_skipped;
      if (res.summary.warnings.size() < 20)
        res.summary.warnings.push_back("line " + std::to_string(rec.line) + ": " + why);
      continue;
    }
    res.summary.toxic += static_cast<std::size_t>(s.label);
    res.sentences.push_back(std::move(s));
  }
  return res;
}

inline IngestResult ingest_csv(const std::string& path, const Vocab& vocab,
                               const IngestOptions& opt = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open corpus '" + path + "'");
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return ingest_csv_string(data, vocab, opt);
}

/// Writes sentences in the ingest schema (id, comment_text, toxic), LF ends.
/// A non-empty `comment` becomes a leading '#' line.
inline void write_csv(std::ostream& out, const std::vector<Sentence>& sentences,
                      const CsvSchema& schema = {}, const std::string& comment = {}) {
  if (!comment.empty()) out << "# " << comment << '\n';
  out << schema.id_column << ',' << schema.text_column << ',' << schema.label_column << '\n';
  for (const auto& s : sentences)
    out << csv_escape(s.id) << ',' << csv_escape(s.text) << ',' << s.label << '\n';
}

}  // namespace distflip::corpus
