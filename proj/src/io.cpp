// SPDX-License-Identifier: Apache-2.0

#include "fllp/io.hpp"

#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

namespace fllp {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

bool skip_line(const std::string& trimmed) { return trimmed.empty() || trimmed.front() == '#'; }

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_real(const std::string& field) {
  const std::string f = trim(field);
  if (f.empty()) throw std::invalid_argument("empty number");
  double v = 0.0;
  const char* begin = f.data();
  const char* end = f.data() + f.size();
  if (*begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end) throw std::invalid_argument("not a number: '" + f + "'");
  if (!std::isfinite(v)) throw std::invalid_argument("non-finite number: '" + f + "'");
  return v;
}

int parse_id(const std::string& field) {
  const std::string f = trim(field);
  int v = 0;
  const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
  if (f.empty() || ec != std::errc() || ptr != f.data() + f.size() || v < 0) {
    throw std::invalid_argument("bad concept id '" + f + "'");
  }
  return v;
}

void write_row(std::ostream& out, const auto& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) out << ',';
    out << format_sig9(v(i));
  }
}

nlohmann::ordered_json config_json(const BenchConfig& cfg) {
  nlohmann::ordered_json j;
  std::vector<double> means;
  for (double m : cfg.task_means) means.push_back(round_sig9(m));
  j["task_means"] = means;
  j["samples"] = cfg.samples;
  j["timesteps"] = cfg.timesteps;
  j["beta"] = round_sig9(cfg.beta);
  j["gamma1"] = round_sig9(cfg.gamma1);
  j["gamma2"] = round_sig9(cfg.gamma2);
  j["curvature"] = round_sig9(cfg.curvature);
  j["learn_curvature"] = cfg.learn_curvature;
  j["steps"] = cfg.steps;
  j["batch"] = cfg.batch;
  j["token_lr"] = round_sig9(cfg.token_lr);
  j["adapter_lr"] = round_sig9(cfg.adapter_lr);
  j["pretrain_steps"] = cfg.pretrain_steps;
  j["consolidation_steps"] = cfg.consolidation_steps;
  j["eval_samples"] = cfg.eval_samples;
  j["hidden_width"] = cfg.net.hidden_width;
  j["hidden_layers"] = cfg.net.hidden_layers;
  return j;
}

}  // namespace

ParseError::ParseError(int line, const std::string& what)
    : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

std::vector<double> parse_real_list(const std::string& text) {
  std::vector<double> out;
  for (const auto& f : split(text, ',')) out.push_back(parse_real(f));
  return out;
}

VectorXd parse_vector(const std::string& text) {
  const auto v = parse_real_list(text);
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<ConceptLine> read_concepts(std::istream& in) {
  std::vector<ConceptLine> out;
  std::vector<int> line_of;
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string line = trim(raw);
    if (skip_line(line)) continue;
    const auto fields = split(line, ';');
    if (fields.size() != 3) throw ParseError(lineno, "expected 'id;token;summary', got " +
                                             std::to_string(fields.size()) + " fields");
    ConceptLine c;
    try {
      c.id = parse_id(fields[0]);
      c.token = parse_vector(fields[1]);
      c.summary = parse_vector(fields[2]);
    } catch (const std::invalid_argument& e) {
      throw ParseError(lineno, e.what());
    }
    if (!out.empty() && (c.token.size() != out.front().token.size() ||
                         c.summary.size() != out.front().summary.size())) {
      throw ParseError(lineno, "dimension differs from earlier concepts");
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (out[i].id == c.id) {
        throw ParseError(lineno, "duplicate concept id " + std::to_string(c.id) + " (first on line " +
                                     std::to_string(line_of[i]) + ")");
      }
    }
    out.push_back(std::move(c));
    line_of.push_back(lineno);
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i].id >= static_cast<int>(out.size())) {
      throw ParseError(line_of[i], "concept id " + std::to_string(out[i].id) + " leaves a gap (expected ids 0.." +
                                       std::to_string(out.size() - 1) + ")");
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

void write_concepts(std::ostream& out, const ConceptRegistry<double>& registry) {
  for (const auto& r : registry.records()) {
    out << r.id << ';';
    write_row(out, r.token_embedding);
    out << ';';
    write_row(out, r.attention_summary);
    out << '\n';
  }
}

ConceptRegistry<double> build_registry(const std::vector<ConceptLine>& lines, Eigen::Index embedding_dim,
                                       Eigen::Index attention_dim) {
  ConceptRegistry<double> reg(embedding_dim, attention_dim);
  for (const auto& c : lines) {
    if (c.token.size() != embedding_dim) {
      throw std::invalid_argument("concept " + std::to_string(c.id) + " has token dimension " +
                                  std::to_string(c.token.size()) + ", expected " + std::to_string(embedding_dim));
    }
    reg.add(c.token, c.summary, c.token);
  }
  return reg;
}

void write_chain_tree(std::ostream& out, const ParentChain& chain, int new_id) {
  out << "child_id,parent_id\n";
  int child = new_id;
  for (int p : chain.parents) {
    out << child << ',' << p << '\n';
    child = p;
  }
}

std::string format_chain(const ParentChain& chain) {
  std::string s = "[";
  for (std::size_t i = 0; i < chain.parents.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(chain.parents[i]);
  }
  return s + "]";
}

std::vector<MatrixXd> read_matrices(std::istream& in) {
  std::vector<MatrixXd> out;
  std::vector<std::vector<double>> rows;
  int first_row_line = 0;
  auto flush = [&] {
    if (rows.empty()) return;
    MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t c = 0; c < rows[r].size(); ++c) {
        m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
      }
    }
    out.push_back(std::move(m));
    rows.clear();
  };
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string line = trim(raw);
    if (!line.empty() && line.front() == '#') continue;
    if (line.empty()) {
      flush();
      continue;
    }
    std::vector<double> row;
    try {
      row = parse_real_list(line);
    } catch (const std::invalid_argument& e) {
      throw ParseError(lineno, e.what());
    }
    if (rows.empty()) first_row_line = lineno;
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw ParseError(lineno, "row has " + std::to_string(row.size()) + " columns, matrix starting on line " +
                                   std::to_string(first_row_line) + " has " +
                                   std::to_string(rows.front().size()));
    }
    rows.push_back(std::move(row));
  }
  flush();
  return out;
}

void write_matrices(std::ostream& out, const std::vector<MatrixXd>& mats) {
  for (std::size_t i = 0; i < mats.size(); ++i) {
    if (i) out << '\n';
    for (Eigen::Index r = 0; r < mats[i].rows(); ++r) {
      write_row(out, mats[i].row(r));
      out << '\n';
    }
  }
}

std::map<std::string, std::string> read_key_values(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string line = trim(raw);
    if (skip_line(line)) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(lineno, "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ParseError(lineno, "empty key");
    if (!kv.emplace(key, trim(line.substr(eq + 1))).second) {
      throw ParseError(lineno, "duplicate key '" + key + "'");
    }
  }
  return kv;
}

std::string format_sig9(double v) {
  if (v == 0.0) return "0";  // also folds -0
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

double round_sig9(double v) {
  if (!std::isfinite(v)) return v;
  return std::strtod(format_sig9(v).c_str(), nullptr);
}

std::string report_json(const ForgettingReport& report, const BenchConfig& cfg) {
  nlohmann::ordered_json j;
  j["mode"] = to_string(report.mode);
  j["seed"] = report.seed;
  auto tasks = nlohmann::ordered_json::array();
  for (const auto& t : report.tasks) {
    nlohmann::ordered_json row;
    row["mu_true"] = round_sig9(t.true_mean);
    row["mu_gen"] = round_sig9(t.generated_mean);
    row["abs_err"] = round_sig9(t.abs_error);
    tasks.push_back(std::move(row));
  }
  j["tasks"] = std::move(tasks);
  j["forgetting_rate"] = round_sig9(report.forgetting_rate);
  std::vector<double> drift;
  for (double d : report.drift) drift.push_back(round_sig9(d));
  j["drift"] = drift;
  j["drift_mean"] = round_sig9(report.drift_mean);
  if (!report.chains.empty()) {
    auto chains = nlohmann::ordered_json::array();
    for (const auto& c : report.chains) chains.push_back(c.parents);
    j["parent_chains"] = std::move(chains);
  }
  j["config"] = config_json(cfg);
  return j.dump(2) + "\n";
}

std::string reports_csv(const std::vector<ForgettingReport>& reports) {
  std::ostringstream out;
  out << "seed,mode,task,mu_true,mu_gen,abs_err\n";
  for (const auto& r : reports) {
    for (std::size_t i = 0; i < r.tasks.size(); ++i) {
      const auto& t = r.tasks[i];
      out << r.seed << ',' << to_string(r.mode) << ',' << i + 1 << ',' << format_sig9(t.true_mean) << ','
          << format_sig9(t.generated_mean) << ',' << format_sig9(t.abs_error) << '\n';
    }
  }
  return out.str();
}

}  // namespace fllp
