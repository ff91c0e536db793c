#include "nl2sql/entity_link.hpp"

#include <algorithm>
#include <map>

#include "nl2sql/errors.hpp"
#include "nl2sql/numeric.hpp"

namespace nl2sql {

std::size_t argmax(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

CellEmbedding mean_char_embedding(std::string_view text, const CharVocab& vocab,
                                  const ag::Tensor& table) {
  if (text.empty()) throw ContractViolation("mean_char_embedding: empty text");
  const auto ids = vocab.ids(text);
  const std::size_t d = table.cols();
  CellEmbedding out{std::vector<double>(d, 0.0), ids.size()};
  for (std::size_t id : ids) {
    if (id >= table.rows()) {
      throw BoundsError("character id " + std::to_string(id) + " outside embedding table of " +
                        std::to_string(table.rows()) + " rows");
    }
    for (std::size_t j = 0; j < d; ++j) out.vector[j] += table.at(id, j);
  }
  for (double& x : out.vector) x /= static_cast<double>(ids.size());
  return out;
}

CellMatch match_cell(std::string_view substring, const std::vector<std::string>& cells,
                     const CharVocab& vocab, const ag::Tensor& table) {
  if (cells.empty()) throw ContractViolation("match_cell: empty column");
  const auto query = mean_char_embedding(substring, vocab, table).vector;
  CellMatch m;
  std::map<std::string_view, double> seen;
  for (const auto& cell : cells) {
    auto it = seen.find(cell);
    if (it == seen.end()) {
      double dot = 0.0;
      if (!cell.empty()) {
        const auto e = mean_char_embedding(cell, vocab, table).vector;
        for (std::size_t j = 0; j < e.size(); ++j) dot += query[j] * e[j];
      }
      it = seen.emplace(cell, dot).first;
    }
    m.scores.push_back(it->second);
  }
  m.row = argmax(m.scores);
  m.value = cells[m.row];
  return m;
}

std::string offline_resolve(std::string_view span, std::size_t col, const Table& t,
                            const CharVocab& vocab, const ag::Tensor& table) {
  const auto values = column_values(t, col);
  if (t.columns[col].dtype == DType::Real) {
    if (auto num = parse_number(span)) return render_number(*num);
    return std::string(span);
  }
  if (span.empty()) span = "?";
  std::vector<std::string> cells;
  cells.reserve(values.size());
  for (const auto& v : values) cells.push_back(cell_to_string(v));
  return match_cell(span, cells, vocab, table).value;
}

ag::Tensor encode_cells(const std::vector<std::string>& cells, const CellEncoder& enc,
                        const CharVocab& vocab) {
  if (cells.empty()) throw ContractViolation("encode_cells: no cells");
  std::vector<std::vector<std::size_t>> ids;
  std::vector<std::size_t> lengths;
  std::size_t steps = 0;
  for (const auto& c : cells) {
    if (c.empty()) throw ContractViolation("encode_cells: empty cell text");
    ids.push_back(vocab.ids(c));
    lengths.push_back(ids.back().size());
    steps = std::max(steps, lengths.back());
  }
  std::vector<ag::Tensor> inputs;
  std::vector<std::size_t> column(cells.size());
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t b = 0; b < cells.size(); ++b) {
      column[b] = t < lengths[b] ? ids[b][t] : CharVocab::kUnk;
    }
    inputs.push_back(ag::embed(enc.embedding, column));
  }
  return ag::bilstm_final(inputs, lengths, enc.forward, enc.backward);
}

ag::Tensor encode_cell(std::string_view cell, const CellEncoder& enc, const CharVocab& vocab) {
  return encode_cells({std::string(cell)}, enc, vocab);
}

CellAttention cell_attention(const ag::Tensor& pooled, const ag::Tensor& h_cells,
                             const ag::Tensor& w_row) {
  if (h_cells.rows() == 0) throw ContractViolation("cell_attention: empty column");
  if (pooled.rows() != 1 || pooled.cols() != h_cells.cols() || w_row.rows() != h_cells.cols() ||
      w_row.cols() != 1) {
    throw ShapeError("cell_attention: pooled " + pooled.shape_string() + ", cells " +
                     h_cells.shape_string() + ", w_row " + w_row.shape_string());
  }
  CellAttention out;
  const ag::Tensor query = ag::mul(ag::transpose(pooled), w_row);  // d x 1
  out.scores = ag::transpose(ag::matmul(h_cells, query));
  out.probs = ag::softmax(out.scores);
  out.row = argmax(out.scores.data());
  return out;
}

}  // namespace nl2sql
