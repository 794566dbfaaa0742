// SPDX-License-Identifier: Apache-2.0
//
// Text formats used by the command-line tool: concept records, delimited
// matrices, flat key=value configs, and benchmark reports.

#pragma once

#include "fllp/bench1d.hpp"
#include "fllp/parent_search.hpp"

#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace fllp {

class ParseError : public std::runtime_error {
 public:
  ParseError(int line, const std::string& what);
  int line() const { return line_; }

 private:
  int line_;
};

/// Comma-separated reals. Throws std::invalid_argument on empty fields,
/// trailing garbage or non-finite values.
std::vector<double> parse_real_list(const std::string& text);
VectorXd parse_vector(const std::string& text);

struct ConceptLine {
  int id = 0;
  VectorXd token;
  VectorXd summary;
};

/// One concept per line: `id;t1,t2,...;a1,a2,...`. Blank lines and lines
/// starting with '#' are skipped. Ids must be unique and cover 0..c-1;
/// all tokens (and all summaries) must share one dimension.
std::vector<ConceptLine> read_concepts(std::istream& in);
void write_concepts(std::ostream& out, const ConceptRegistry<double>& registry);

/// Registry with concepts inserted in id order. Each concept's token
/// doubles as its stored feature. `embedding_dim` / `attention_dim` size
/// an empty registry and must agree with non-empty input.
ConceptRegistry<double> build_registry(const std::vector<ConceptLine>& lines, Eigen::Index embedding_dim,
                                       Eigen::Index attention_dim);

/// Edge list `child_id,parent_id` along the chain, starting at `new_id`.
void write_chain_tree(std::ostream& out, const ParentChain& chain, int new_id);
std::string format_chain(const ParentChain& chain);

/// Matrices as comma-separated rows; consecutive matrices are separated by
/// one or more blank lines. '#' lines are comments.
std::vector<MatrixXd> read_matrices(std::istream& in);
void write_matrices(std::ostream& out, const std::vector<MatrixXd>& mats);

/// Flat `key = value` lines; '#' starts a comment line. Duplicate keys are
/// an error.
std::map<std::string, std::string> read_key_values(std::istream& in);

/// Rounds to 9 significant digits.
double round_sig9(double v);
std::string format_sig9(double v);

std::string report_json(const ForgettingReport& report, const BenchConfig& cfg);
/// Header plus one row per (seed, mode, task).
std::string reports_csv(const std::vector<ForgettingReport>& reports);

}  // namespace fllp
