#include "revgnn/dataset.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace revgnn {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find('\t', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

[[noreturn]] void fail(const std::string& file, std::size_t line_no, const std::string& what) {
  throw input_error(file + ":" + std::to_string(line_no) + ": " + what);
}

index_t parse_index(const std::string& file, std::size_t line_no, const std::string& tok) {
  index_t v = 0;
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size()) fail(file, line_no, "expected integer, got '" + tok + "'");
  return v;
}

double parse_real(const std::string& file, std::size_t line_no, const std::string& tok) {
  try {
    std::size_t used = 0;
    const double v = std::stod(tok, &used);
    if (used != tok.size()) fail(file, line_no, "expected number, got '" + tok + "'");
    return v;
  } catch (const std::exception&) {
    fail(file, line_no, "expected number, got '" + tok + "'");
  }
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string meta_path = dir + "/meta.tsv";
  std::map<std::string, std::string> meta;
  {
    auto lines = read_lines(meta_path);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      auto cols = split_tabs(lines[i]);
      if (cols.size() != 2) fail(meta_path, i + 1, "expected key<TAB>value");
      meta[cols[0]] = cols[1];
    }
  }
  for (const char* key : {"num_nodes", "num_classes", "task", "directed"})
    require(meta.count(key) == 1, meta_path + ": missing key " + key);

  Dataset data;
  const index_t n = parse_index(meta_path, 0, meta.at("num_nodes"));
  data.num_classes = parse_index(meta_path, 0, meta.at("num_classes"));
  require(meta.at("task") == "multiclass" || meta.at("task") == "multilabel",
          meta_path + ": task must be multiclass or multilabel");
  data.multilabel = meta.at("task") == "multilabel";
  require(meta.at("directed") == "0" || meta.at("directed") == "1",
          meta_path + ": directed must be 0 or 1");
  data.directed = meta.at("directed") == "1";

  // nodes.tsv
  {
    const std::string path = dir + "/nodes.tsv";
    auto lines = read_lines(path);
    if (static_cast<index_t>(lines.size()) != n) fail(path, lines.size(), "expected one row per node");
    const auto first = split_tabs(lines[0]);
    if (first.size() < 2) fail(path, 1, "expected node_id plus at least one feature column");
    const std::size_t d = first.size() - 1;
    data.features = Mat<double>(n, static_cast<index_t>(d));
    for (std::size_t i = 0; i < lines.size(); ++i) {
      auto cols = split_tabs(lines[i]);
      if (cols.size() != d + 1) fail(path, i + 1, "inconsistent column count");
      const index_t id = parse_index(path, i + 1, cols[0]);
      if (id != static_cast<index_t>(i)) fail(path, i + 1, "node ids must be 0..N-1 in order");
      for (std::size_t c = 0; c < d; ++c)
        data.features(id, static_cast<index_t>(c)) = parse_real(path, i + 1, cols[c + 1]);
    }
  }

  // edges.tsv (may legitimately be absent edges, but the file must exist)
  {
    const std::string path = dir + "/edges.tsv";
    require(fs::exists(path), "cannot open " + path);
    std::vector<std::string> lines;
    if (fs::file_size(path) > 0) lines = read_lines(path);
    EdgeList edges;
    Mat<double> feat;
    std::size_t f_cols = 0;
    if (!lines.empty()) {
      f_cols = split_tabs(lines[0]).size() - 2;
      feat = f_cols > 0 ? Mat<double>(static_cast<index_t>(lines.size()), static_cast<index_t>(f_cols)) : Mat<double>();
    }
    for (std::size_t i = 0; i < lines.size(); ++i) {
      auto cols = split_tabs(lines[i]);
      if (cols.size() != f_cols + 2) fail(path, i + 1, "inconsistent column count");
      const index_t s = parse_index(path, i + 1, cols[0]);
      const index_t t = parse_index(path, i + 1, cols[1]);
      if (s < 0 || s >= n || t < 0 || t >= n) fail(path, i + 1, "edge endpoint out of range");
      edges.emplace_back(s, t);
      for (std::size_t c = 0; c < f_cols; ++c)
        feat(static_cast<index_t>(i), static_cast<index_t>(c)) = parse_real(path, i + 1, cols[c + 2]);
    }
    CsrGraph g = build_csr(edges, n, feat);
    data.graph = data.directed ? std::move(g) : to_undirected(g);
  }

  // labels.tsv
  {
    const std::string path = dir + "/labels.tsv";
    auto lines = read_lines(path);
    if (static_cast<index_t>(lines.size()) != n) fail(path, lines.size(), "expected one row per node");
    if (data.multilabel) {
      const std::size_t t = split_tabs(lines[0]).size() - 1;
      if (static_cast<index_t>(t) != data.num_classes) fail(path, 1, "label column count != num_classes");
      data.labels.binary = Mat<double>(n, static_cast<index_t>(t));
      for (std::size_t i = 0; i < lines.size(); ++i) {
        auto cols = split_tabs(lines[i]);
        if (cols.size() != t + 1) fail(path, i + 1, "inconsistent column count");
        const index_t id = parse_index(path, i + 1, cols[0]);
        if (id != static_cast<index_t>(i)) fail(path, i + 1, "node ids must be 0..N-1 in order");
        for (std::size_t c = 0; c < t; ++c) {
          const double v = parse_real(path, i + 1, cols[c + 1]);
          if (v != 0.0 && v != 1.0) fail(path, i + 1, "multilabel entries must be 0 or 1");
          data.labels.binary(id, static_cast<index_t>(c)) = v;
        }
      }
    } else {
      data.labels.class_ids.resize(static_cast<std::size_t>(n));
      for (std::size_t i = 0; i < lines.size(); ++i) {
        auto cols = split_tabs(lines[i]);
        if (cols.size() != 2) fail(path, i + 1, "expected node_id<TAB>class");
        const index_t id = parse_index(path, i + 1, cols[0]);
        if (id != static_cast<index_t>(i)) fail(path, i + 1, "node ids must be 0..N-1 in order");
        const index_t cls = parse_index(path, i + 1, cols[1]);
        if (cls < 0 || cls >= data.num_classes) fail(path, i + 1, "class index out of range");
        data.labels.class_ids[static_cast<std::size_t>(id)] = cls;
      }
    }
  }

  // splits.tsv
  {
    const std::string path = dir + "/splits.tsv";
    auto lines = read_lines(path);
    if (static_cast<index_t>(lines.size()) != n) fail(path, lines.size(), "expected one row per node");
    data.labels.train_mask.assign(static_cast<std::size_t>(n), 0);
    data.labels.valid_mask.assign(static_cast<std::size_t>(n), 0);
    data.labels.test_mask.assign(static_cast<std::size_t>(n), 0);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      auto cols = split_tabs(lines[i]);
      if (cols.size() != 2) fail(path, i + 1, "expected node_id<TAB>split");
      const index_t id = parse_index(path, i + 1, cols[0]);
      if (id != static_cast<index_t>(i)) fail(path, i + 1, "node ids must be 0..N-1 in order");
      if (cols[1] == "train")
        data.labels.train_mask[static_cast<std::size_t>(id)] = 1;
      else if (cols[1] == "valid")
        data.labels.valid_mask[static_cast<std::size_t>(id)] = 1;
      else if (cols[1] == "test")
        data.labels.test_mask[static_cast<std::size_t>(id)] = 1;
      else
        fail(path, i + 1, "split must be train, valid or test");
    }
  }

  data.labels.validate(n, data.num_classes);
  return data;
}

void save_dataset(const std::string& dir, const Dataset& data) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const index_t n = data.graph.num_nodes;

  {
    std::ofstream out(dir + "/meta.tsv");
    require(out.good(), "cannot write " + dir + "/meta.tsv");
    out << "num_nodes\t" << n << "\n";
    out << "num_classes\t" << data.num_classes << "\n";
    out << "task\t" << (data.multilabel ? "multilabel" : "multiclass") << "\n";
    out << "directed\t" << (data.directed ? 1 : 0) << "\n";
  }
  {
    std::ofstream out(dir + "/nodes.tsv");
    for (index_t i = 0; i < n; ++i) {
      out << i;
      for (index_t c = 0; c < data.features.cols(); ++c) out << '\t' << num(data.features(i, c));
      out << '\n';
    }
  }
  {
    std::ofstream out(dir + "/edges.tsv");
    EdgeList edges = edge_list(data.graph);
    for (std::size_t e = 0; e < edges.size(); ++e) {
      const auto [s, t] = edges[e];
      if (!data.directed && s > t) continue;  // undirected pairs stored once
      out << s << '\t' << t;
      for (index_t c = 0; c < data.graph.edge_feat_dim(); ++c)
        out << '\t' << num(data.graph.edge_feat(static_cast<index_t>(e), c));
      out << '\n';
    }
  }
  {
    std::ofstream out(dir + "/labels.tsv");
    for (index_t i = 0; i < n; ++i) {
      out << i;
      if (data.multilabel)
        for (index_t c = 0; c < data.labels.binary.cols(); ++c)
          out << '\t' << static_cast<int>(data.labels.binary(i, c));
      else
        out << '\t' << data.labels.class_ids[static_cast<std::size_t>(i)];
      out << '\n';
    }
  }
  {
    std::ofstream out(dir + "/splits.tsv");
    for (index_t i = 0; i < n; ++i) {
      const char* split = data.labels.train_mask[static_cast<std::size_t>(i)]   ? "train"
                          : data.labels.valid_mask[static_cast<std::size_t>(i)] ? "valid"
                                                                                : "test";
      out << i << '\t' << split << '\n';
    }
  }
}

Dataset gen_sbm(const SbmSpec& spec) {
  require(spec.num_nodes >= spec.num_classes && spec.num_classes >= 2, "gen_sbm: bad sizes");
  require(spec.p_out >= 0.0 && spec.p_out < spec.p_in && spec.p_in <= 1.0,
          "gen_sbm: need 0 <= p_out < p_in <= 1");
  require(spec.feature_dim >= spec.num_classes, "gen_sbm: feature_dim must cover the classes");

  Dataset data;
  data.num_classes = spec.num_classes;
  data.multilabel = false;
  data.directed = false;
  const index_t n = spec.num_nodes;

  Rng rng(hash_combine(spec.seed, 0x73626dull));  // "sbm"
  data.labels.class_ids.resize(static_cast<std::size_t>(n));
  for (index_t i = 0; i < n; ++i)
    data.labels.class_ids[static_cast<std::size_t>(i)] = static_cast<index_t>(rng.uniform_int(static_cast<std::uint64_t>(spec.num_classes)));

  EdgeList undirected;
  for (index_t u = 0; u < n; ++u) {
    for (index_t v = u + 1; v < n; ++v) {
      const bool same = data.labels.class_ids[static_cast<std::size_t>(u)] == data.labels.class_ids[static_cast<std::size_t>(v)];
      if (rng.uniform() < (same ? spec.p_in : spec.p_out)) undirected.emplace_back(u, v);
    }
  }
  EdgeList both = undirected;
  for (auto [u, v] : undirected) both.emplace_back(v, u);
  data.graph = build_csr(both, n);

  data.features = Mat<double>(n, spec.feature_dim);
  for (index_t i = 0; i < n; ++i) {
    data.features(i, data.labels.class_ids[static_cast<std::size_t>(i)]) = 1.0;
    for (index_t c = 0; c < spec.feature_dim; ++c)
      data.features(i, c) += spec.feature_noise * rng.normal();
  }

  // 60/20/20 split over a random permutation
  std::vector<index_t> perm(static_cast<std::size_t>(n));
  for (index_t i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
  for (index_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<index_t>(rng.uniform_int(static_cast<std::uint64_t>(i) + 1));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  data.labels.train_mask.assign(static_cast<std::size_t>(n), 0);
  data.labels.valid_mask.assign(static_cast<std::size_t>(n), 0);
  data.labels.test_mask.assign(static_cast<std::size_t>(n), 0);
  const index_t n_train = (n * 6) / 10;
  const index_t n_valid = (n * 2) / 10;
  for (index_t i = 0; i < n; ++i) {
    const index_t node = perm[static_cast<std::size_t>(i)];
    if (i < n_train)
      data.labels.train_mask[static_cast<std::size_t>(node)] = 1;
    else if (i < n_train + n_valid)
      data.labels.valid_mask[static_cast<std::size_t>(node)] = 1;
    else
      data.labels.test_mask[static_cast<std::size_t>(node)] = 1;
  }
  return data;
}

Mat<double> features_from_edge_sums(const CsrGraph& g) {
  require(g.has_edge_feat(), "features_from_edge_sums: graph carries no edge features");
  Mat<double> out(g.num_nodes, g.edge_feat_dim());
  for (index_t u = 0; u < g.num_nodes; ++u)
    for (index_t k = g.in_ptr[u]; k < g.in_ptr[u + 1]; ++k)
      for (index_t c = 0; c < g.edge_feat_dim(); ++c)
        out(u, c) += g.edge_feat(g.in_edge_id[static_cast<std::size_t>(k)], c);
  return out;
}

}  // namespace revgnn
