#pragma once

// Text formats: detection tables, candidate graphs and track files. Numbers
// are written in shortest round-trip form, so write followed by read
// reproduces every value bit for bit.

#include <charconv>
#include <filesystem>
#include <fstream>

#include "celltrack/types.hpp"

namespace celltrack {

/// Malformed input. The message starts with "source:line:column:".
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& source, std::size_t line, std::size_t column, const std::string& what)
      : std::runtime_error(source + ":" + std::to_string(line) + ":" + std::to_string(column) + ": " + what),
        line_(line),
        column_(column) {}
  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t line_, column_;
};

inline std::string format_number(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string format_number(std::int64_t v) { return std::to_string(v); }

namespace detail {

/// One record of a delimited text file, with the position of each field.
struct Row {
  const std::string* source = nullptr;
  std::size_t line = 0;
  std::vector<std::string_view> fields;

  [[noreturn]] void fail(std::size_t col, const std::string& what) const { throw ParseError(*source, line, col, what); }

  void expect_fields(std::size_t n) const {
    if (fields.size() != n)
      fail(fields.size() < n ? fields.size() + 1 : n + 1,
           "expected " + std::to_string(n) + " fields, found " + std::to_string(fields.size()));
  }

  double real(std::size_t col) const {
    const auto f = fields[col - 1];
    double v = 0.0;
    const auto r = std::from_chars(f.data(), f.data() + f.size(), v);
    if (r.ec != std::errc() || r.ptr != f.data() + f.size())
      fail(col, "'" + std::string(f) + "' is not a number");
    if (!std::isfinite(v)) fail(col, "non-finite value '" + std::string(f) + "'");
    return v;
  }

  std::int64_t integer(std::size_t col) const {
    const auto f = fields[col - 1];
    std::int64_t v = 0;
    const auto r = std::from_chars(f.data(), f.data() + f.size(), v);
    if (r.ec != std::errc() || r.ptr != f.data() + f.size())
      fail(col, "'" + std::string(f) + "' is not an integer");
    return v;
  }

  int frame(std::size_t col) const {
    const auto v = integer(col);
    if (v < 0 || v > std::numeric_limits<int>::max()) fail(col, "frame " + std::to_string(v) + " out of range");
    return static_cast<int>(v);
  }
};

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  if (sep == ' ') {
    std::size_t i = 0;
    while (i < s.size()) {
      while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
      if (i == s.size()) break;
      std::size_t j = i;
      while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
      out.push_back(s.substr(i, j - i));
      i = j;
    }
    return out;
  }
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i)
    if (i == s.size() || s[i] == sep) {
      out.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  return out;
}

/// Calls fn(row) for every non-blank line. Lines ending in '\r' are accepted.
template <class Fn>
void for_each_row(std::istream& in, const std::string& source, char sep, Fn&& fn) {
  std::string line;
  Row row;
  row.source = &source;
  while (std::getline(in, line)) {
    ++row.line;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    row.fields = split(line, sep);
    fn(row);
  }
  if (in.bad()) throw std::runtime_error(source + ": read error");
}

inline std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string() + " for reading");
  return in;
}

inline std::ofstream open_out(const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + p.string() + " for writing");
  return out;
}

inline void close_out(std::ofstream& out, const std::filesystem::path& p) {
  out.close();
  if (!out) throw std::runtime_error("error writing " + p.string());
}

inline std::filesystem::path with_suffix(const std::filesystem::path& prefix, const char* suffix) {
  return std::filesystem::path(prefix.string() + suffix);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Detections

inline constexpr const char* kDetectionsHeader = "id,frame,z,y,x,score,s_parent,s_daughter,s_continue,s_polar,mz,my,mx";

inline void write_detections(std::ostream& out, const std::vector<Detection>& dets) {
  out << kDetectionsHeader << '\n';
  for (const auto& d : dets) {
    out << d.id << ',' << d.frame;
    for (double v : d.position) out << ',' << format_number(v);
    out << ',' << format_number(d.score);
    for (double v : d.state_scores) out << ',' << format_number(v);
    for (double v : d.movement) out << ',' << format_number(v);
    out << '\n';
  }
}

/// Rows in file order. Ids must be unique; scores are not clamped here.
inline std::vector<Detection> read_detections(std::istream& in, const std::string& source) {
  std::vector<Detection> out;
  std::unordered_map<std::int64_t, std::size_t> seen;
  bool header = false;
  detail::for_each_row(in, source, ',', [&](const detail::Row& r) {
    if (!header) {
      const auto expected = detail::split(kDetectionsHeader, ',');
      r.expect_fields(expected.size());
      for (std::size_t k = 0; k < expected.size(); ++k)
        if (r.fields[k] != expected[k])
          r.fail(k + 1, "header field '" + std::string(r.fields[k]) + "', expected '" + std::string(expected[k]) + "'");
      header = true;
      return;
    }
    r.expect_fields(13);
    Detection d;
    d.id = r.integer(1);
    d.frame = r.frame(2);
    for (int k = 0; k < 3; ++k) d.position[k] = r.real(3 + k);
    d.score = r.real(6);
    for (int k = 0; k < 4; ++k) d.state_scores[k] = r.real(7 + k);
    for (int k = 0; k < 3; ++k) d.movement[k] = r.real(11 + k);
    if (auto [it, fresh] = seen.emplace(d.id, r.line); !fresh)
      r.fail(1, "duplicate id " + std::to_string(d.id) + " (first on line " + std::to_string(it->second) + ")");
    out.push_back(d);
  });
  if (!header) throw ParseError(source, 1, 1, "missing header");
  return out;
}

inline void save_detections(const std::filesystem::path& p, const std::vector<Detection>& dets) {
  auto out = detail::open_out(p);
  write_detections(out, dets);
  detail::close_out(out, p);
}

inline std::vector<Detection> load_detections(const std::filesystem::path& p) {
  auto in = detail::open_in(p);
  return read_detections(in, p.string());
}

// ---------------------------------------------------------------------------
// Candidate graphs: PREFIX_nodes.csv (detections) and PREFIX_edges.csv

inline constexpr const char* kEdgesHeader = "source,target,cost";

inline void write_edges(std::ostream& out, const CandidateGraph& g) {
  out << kEdgesHeader << '\n';
  for (const auto& e : g.edges())
    out << g.node(e.source).id << ',' << g.node(e.target).id << ',' << format_number(e.cost) << '\n';
}

inline std::vector<CandidateGraph::EdgeSpec> read_edges(std::istream& in, const std::string& source) {
  std::vector<CandidateGraph::EdgeSpec> out;
  bool header = false;
  detail::for_each_row(in, source, ',', [&](const detail::Row& r) {
    if (!header) {
      r.expect_fields(3);
      if (r.fields[0] != "source" || r.fields[1] != "target" || r.fields[2] != "cost")
        r.fail(1, std::string("header must be '") + kEdgesHeader + "'");
      header = true;
      return;
    }
    r.expect_fields(3);
    const double cost = r.real(3);
    if (cost < 0.0) r.fail(3, "negative edge cost");
    out.push_back({r.integer(1), r.integer(2), cost});
  });
  if (!header) throw ParseError(source, 1, 1, "missing header");
  return out;
}

inline void save_graph(const std::filesystem::path& prefix, const CandidateGraph& g) {
  save_detections(detail::with_suffix(prefix, "_nodes.csv"), g.nodes());
  const auto p = detail::with_suffix(prefix, "_edges.csv");
  auto out = detail::open_out(p);
  write_edges(out, g);
  detail::close_out(out, p);
}

inline CandidateGraph load_graph(const std::filesystem::path& prefix) {
  auto nodes = load_detections(detail::with_suffix(prefix, "_nodes.csv"));
  const auto p = detail::with_suffix(prefix, "_edges.csv");
  auto in = detail::open_in(p);
  auto edges = read_edges(in, p.string());
  try {
    return CandidateGraph(std::move(nodes), edges);
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(prefix.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Track files
//
// PREFIX.txt:       label begin_frame end_frame parent_label polar_flag
// PREFIX_nodes.txt: label frame z y x id
//
// One row per track segment, whitespace separated. parent_label 0 means no
// parent. A segment has exactly one node per frame from begin to end.

struct TrackRow {
  std::int64_t label = 0;
  int begin = 0;
  int end = 0;
  std::int64_t parent = 0;
  bool polar = false;
};

inline std::vector<TrackRow> track_rows(const LineageForest& f) {
  std::map<std::int64_t, TrackRow> rows;
  for (std::size_t i = 0; i < f.num_nodes(); ++i) {
    const auto& n = f.node(i);
    auto [it, fresh] = rows.try_emplace(n.track);
    TrackRow& r = it->second;
    if (fresh) {
      r.label = n.track;
      r.begin = r.end = n.frame;
      const std::size_t p = f.parent_of(i);
      r.parent = p == LineageForest::npos ? 0 : f.node(p).track;
    }
    r.begin = std::min(r.begin, n.frame);
    r.end = std::max(r.end, n.frame);
    r.polar = r.polar || n.polar;
  }
  std::vector<TrackRow> out;
  for (auto& [label, r] : rows) out.push_back(r);
  return out;
}

/// Throws if a link skips a frame, which the format cannot express.
inline void write_tracks(std::ostream& tracks, std::ostream& nodes, const LineageForest& f) {
  for (auto [p, c] : f.edges())
    if (f.node(c).frame != f.node(p).frame + 1)
      throw std::invalid_argument("track file: link " + std::to_string(f.node(p).id) + "->" +
                                  std::to_string(f.node(c).id) + " skips a frame");
  for (const auto& r : track_rows(f))
    tracks << r.label << ' ' << r.begin << ' ' << r.end << ' ' << r.parent << ' ' << (r.polar ? 1 : 0) << '\n';
  std::vector<std::size_t> order(f.num_nodes());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::pair(f.node(a).track, f.node(a).frame) < std::pair(f.node(b).track, f.node(b).frame);
  });
  for (auto i : order) {
    const auto& n = f.node(i);
    nodes << n.track << ' ' << n.frame << ' ' << format_number(n.position[0]) << ' ' << format_number(n.position[1])
          << ' ' << format_number(n.position[2]) << ' ' << n.id << '\n';
  }
}

/// Reads both tables and rebuilds the forest. States follow the topology.
inline LineageForest read_tracks(std::istream& tracks, const std::string& tracks_source, std::istream& nodes,
                                 const std::string& nodes_source) {
  std::map<std::int64_t, std::pair<TrackRow, std::size_t>> rows;  // label -> row, line
  detail::for_each_row(tracks, tracks_source, ' ', [&](const detail::Row& r) {
    r.expect_fields(5);
    TrackRow t;
    t.label = r.integer(1);
    if (t.label <= 0) r.fail(1, "track label must be positive");
    t.begin = r.frame(2);
    t.end = r.frame(3);
    if (t.begin > t.end) r.fail(3, "track " + std::to_string(t.label) + " ends before it begins");
    t.parent = r.integer(4);
    if (t.parent < 0) r.fail(4, "negative parent label");
    if (t.parent == t.label) r.fail(4, "track " + std::to_string(t.label) + " is its own parent");
    const auto polar = r.integer(5);
    if (polar != 0 && polar != 1) r.fail(5, "polar flag must be 0 or 1");
    t.polar = polar == 1;
    if (auto [it, fresh] = rows.try_emplace(t.label, t, r.line); !fresh)
      r.fail(1, "duplicate track label " + std::to_string(t.label) + " (first on line " +
                    std::to_string(it->second.second) + ")");
  });

  std::map<std::int64_t, int> children;
  for (const auto& [label, entry] : rows) {
    const auto& [t, line] = entry;
    if (t.parent == 0) continue;
    auto p = rows.find(t.parent);
    if (p == rows.end())
      throw ParseError(tracks_source, line, 4,
                       "track " + std::to_string(label) + " names missing parent " + std::to_string(t.parent));
    if (p->second.first.end != t.begin - 1)
      throw ParseError(tracks_source, line, 2,
                       "track " + std::to_string(label) + " begins at frame " + std::to_string(t.begin) +
                           " but its parent " + std::to_string(t.parent) + " ends at frame " +
                           std::to_string(p->second.first.end));
    if (++children[t.parent] > 2)
      throw ParseError(tracks_source, line, 4, "parent " + std::to_string(t.parent) + " has more than two children");
  }

  std::vector<LineageNode> out;
  std::map<std::pair<std::int64_t, int>, std::int64_t> at;  // (label, frame) -> node id
  std::unordered_map<std::int64_t, std::size_t> ids;
  detail::for_each_row(nodes, nodes_source, ' ', [&](const detail::Row& r) {
    r.expect_fields(6);
    const auto label = r.integer(1);
    const auto row = rows.find(label);
    if (row == rows.end()) r.fail(1, "unknown track label " + std::to_string(label));
    LineageNode n;
    n.frame = r.frame(2);
    const auto& t = row->second.first;
    if (n.frame < t.begin || n.frame > t.end)
      r.fail(2, "frame " + std::to_string(n.frame) + " outside track " + std::to_string(label) + " [" +
                    std::to_string(t.begin) + ", " + std::to_string(t.end) + "]");
    for (int k = 0; k < 3; ++k) n.position[k] = r.real(3 + k);
    n.id = r.integer(6);
    n.polar = t.polar;
    if (auto [it, fresh] = ids.emplace(n.id, r.line); !fresh)
      r.fail(6, "duplicate node id " + std::to_string(n.id) + " (first on line " + std::to_string(it->second) + ")");
    if (!at.emplace(std::pair(label, n.frame), n.id).second)
      r.fail(2, "track " + std::to_string(label) + " has two nodes in frame " + std::to_string(n.frame));
    out.push_back(n);
  });

  std::vector<std::pair<std::int64_t, std::int64_t>> edges;
  for (const auto& [label, entry] : rows) {
    const auto& [t, line] = entry;
    for (int f = t.begin; f <= t.end; ++f)
      if (!at.count({label, f}))
        throw ParseError(tracks_source, line, 2,
                         "track " + std::to_string(label) + " has no node in frame " + std::to_string(f) + " in " +
                             nodes_source);
    for (int f = t.begin; f < t.end; ++f) edges.emplace_back(at.at({label, f}), at.at({label, f + 1}));
    if (t.parent) edges.emplace_back(at.at({t.parent, t.begin - 1}), at.at({label, t.begin}));
  }
  LineageForest forest(std::move(out), edges);
  forest.label_states_from_topology();
  return forest;
}

inline void save_tracks(const std::filesystem::path& prefix, const LineageForest& f) {
  const auto tp = detail::with_suffix(prefix, ".txt"), np = detail::with_suffix(prefix, "_nodes.txt");
  std::ostringstream tracks, nodes;
  write_tracks(tracks, nodes, f);
  auto a = detail::open_out(tp);
  a << tracks.str();
  detail::close_out(a, tp);
  auto b = detail::open_out(np);
  b << nodes.str();
  detail::close_out(b, np);
}

inline LineageForest load_tracks(const std::filesystem::path& prefix) {
  const auto tp = detail::with_suffix(prefix, ".txt"), np = detail::with_suffix(prefix, "_nodes.txt");
  auto a = detail::open_in(tp);
  auto b = detail::open_in(np);
  return read_tracks(a, tp.string(), b, np.string());
}

}  // namespace celltrack
