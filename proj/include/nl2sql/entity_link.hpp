#pragma once

// Resolution of extracted condition values against the cells of a column:
// an embedding matcher applied after decoding, and a trainable attention
// head over encoded cells.

#include <string>
#include <string_view>
#include <vector>

#include "nl2sql/table_store.hpp"
#include "nl2sql/tensor.hpp"
#include "nl2sql/text.hpp"

namespace nl2sql {

struct CellEmbedding {
  std::vector<double> vector;
  std::size_t length = 0;  // number of characters averaged
};

// Mean of the text's character embeddings (rows of `table`, V x d).
// Throws ContractViolation on empty text.
CellEmbedding mean_char_embedding(std::string_view text, const CharVocab& vocab,
                                  const ag::Tensor& table);

struct CellMatch {
  std::string value;
  std::size_t row = 0;
  std::vector<double> scores;  // one dot product per cell
};

// Cell with the largest dot product against the substring embedding; the
// lowest row wins ties. Throws ContractViolation on an empty column.
CellMatch match_cell(std::string_view substring, const std::vector<std::string>& cells,
                     const CharVocab& vocab, const ag::Tensor& table);

// TEXT column: the matched cell. REAL column: the span itself, rendered
// canonically when it parses as a number.
std::string offline_resolve(std::string_view span, std::size_t col, const Table& t,
                            const CharVocab& vocab, const ag::Tensor& table);

// Character-level bidirectional encoder shared by every cell.
struct CellEncoder {
  ag::Tensor embedding;  // V x e
  ag::LstmWeights forward;
  ag::LstmWeights backward;
  std::size_t width() const { return forward.hidden() + backward.hidden(); }
};

// Final [forward, backward] states, one row per cell (N x width).
ag::Tensor encode_cells(const std::vector<std::string>& cells, const CellEncoder& enc,
                        const CharVocab& vocab);
ag::Tensor encode_cell(std::string_view cell, const CellEncoder& enc, const CharVocab& vocab);

struct CellAttention {
  ag::Tensor scores;  // 1 x R
  ag::Tensor probs;   // 1 x R
  std::size_t row = 0;
};

// score_i = pooled . (h_cells_i * w_row), softmax over rows, argmax with the
// lowest row on ties. pooled is 1 x d, h_cells R x d, w_row d x 1.
CellAttention cell_attention(const ag::Tensor& pooled, const ag::Tensor& h_cells,
                             const ag::Tensor& w_row);

// Index of the largest entry; the first one on ties.
std::size_t argmax(const std::vector<double>& v);

}  // namespace nl2sql
