#include "crelmm/model_data.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <utility>

namespace crelmm {

bool is_positive_definite(const SymMatrix& M) {
  Eigen::LLT<Eigen::MatrixXd> llt(M.mat());
  return llt.info() == Eigen::Success;
}

ModelParams::ModelParams(Eigen::VectorXd beta_A_in, Eigen::VectorXd beta_B_in,
                         SymMatrix Sigma_in, SymMatrix Sigma_prime_in,
                         double sigma2_in)
    : beta_A(std::move(beta_A_in)),
      beta_B(std::move(beta_B_in)),
      Sigma(std::move(Sigma_in)),
      Sigma_prime(std::move(Sigma_prime_in)),
      sigma2(sigma2_in) {
  if (Sigma.dim() != Sigma_prime.dim()) {
    throw Error("ModelParams: Sigma and Sigma' dimensions differ");
  }
  if (beta_A.size() != Sigma.dim()) {
    throw Error("ModelParams: beta_A length must equal dim(Sigma)");
  }
  if (!(sigma2 > 0.0)) throw Error("ModelParams: sigma2 must be > 0");
  if (!is_positive_definite(Sigma)) {
    throw Error("ModelParams: Sigma is not positive definite");
  }
  if (!is_positive_definite(Sigma_prime)) {
    throw Error("ModelParams: Sigma' is not positive definite");
  }
}

CrossedDataset::CrossedDataset(int m, int m_prime, std::vector<CellBlock> cells,
                               std::vector<std::string> row_labels,
                               std::vector<std::string> col_labels)
    : m_(m),
      m_prime_(m_prime),
      cells_(std::move(cells)),
      row_labels_(std::move(row_labels)),
      col_labels_(std::move(col_labels)) {
  if (m_ < 1 || m_prime_ < 1) {
    throw Error("CrossedDataset: factor level counts must be >= 1");
  }
  if (cells_.size() != static_cast<std::size_t>(m_) * m_prime_) {
    throw Error("CrossedDataset: expected " + std::to_string(m_ * m_prime_) +
                " cells, got " + std::to_string(cells_.size()));
  }
  if (row_labels_.empty()) {
    for (int i = 0; i < m_; ++i) row_labels_.push_back(std::to_string(i + 1));
  }
  if (col_labels_.empty()) {
    for (int ip = 0; ip < m_prime_; ++ip)
      col_labels_.push_back(std::to_string(ip + 1));
  }
  if (static_cast<int>(row_labels_.size()) != m_ ||
      static_cast<int>(col_labels_.size()) != m_prime_) {
    throw Error("CrossedDataset: label counts do not match m, m'");
  }

  d_A_ = static_cast<int>(cells_.front().XA.cols());
  d_B_ = static_cast<int>(cells_.front().XB.cols());
  if (d_A_ < 1) throw Error("CrossedDataset: d_A must be >= 1");

  std::vector<std::pair<std::string, std::string>> empty_cells;
  offsets_.resize(cells_.size());
  row_sizes_.assign(m_, 0);
  n_total_ = 0;
  for (int i = 0; i < m_; ++i) {
    for (int ip = 0; ip < m_prime_; ++ip) {
      const CellBlock& c = cells_[static_cast<std::size_t>(i) * m_prime_ + ip];
      const int n_cell = static_cast<int>(c.y.size());
      if (n_cell < 1) {
        empty_cells.emplace_back(row_labels_[i], col_labels_[ip]);
        continue;
      }
      if (c.XA.rows() != n_cell || c.XB.rows() != n_cell) {
        throw Error("CrossedDataset: row counts of y, XA, XB disagree in cell (" +
                    row_labels_[i] + ", " + col_labels_[ip] + ")");
      }
      if (c.XA.cols() != d_A_ || c.XB.cols() != d_B_) {
        throw SchemaError("CrossedDataset: predictor arity differs in cell (" +
                          row_labels_[i] + ", " + col_labels_[ip] + ")");
      }
      if (!c.y.allFinite() || !c.XA.allFinite() ||
          (d_B_ > 0 && !c.XB.allFinite())) {
        throw Error("CrossedDataset: non-finite entry in cell (" +
                    row_labels_[i] + ", " + col_labels_[ip] + ")");
      }
      offsets_[static_cast<std::size_t>(i) * m_prime_ + ip] = n_total_;
      row_sizes_[i] += n_cell;
      n_total_ += n_cell;
    }
  }
  if (!empty_cells.empty()) {
    std::string msg = "CrossedDataset: grid is incomplete; missing cells:";
    for (const auto& [r, c] : empty_cells) msg += " (" + r + ", " + c + ")";
    throw IncompleteGridError(msg, std::move(empty_cells));
  }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

double parse_double(const std::string& s, std::size_t row, const std::string& col) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0') {
    throw CsvParseError("load_csv: non-numeric value '" + s + "' in column '" +
                            col + "' at row " + std::to_string(row),
                        row);
  }
  return v;
}

int find_column(const std::vector<std::string>& header, const std::string& name) {
  for (std::size_t j = 0; j < header.size(); ++j)
    if (header[j] == name) return static_cast<int>(j);
  throw SchemaError("load_csv: column '" + name + "' not found in header");
}

}  // namespace

CrossedDataset load_csv(const std::string& path, const ColumnSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error("load_csv: cannot open '" + path + "'");
  if (schema.xA.empty() && !schema.add_intercept_A) {
    throw SchemaError("load_csv: schema has no X_A columns and no intercept");
  }

  std::string line;
  if (!std::getline(in, line)) {
    throw CsvParseError("load_csv: empty file '" + path + "'", 1);
  }
  const std::vector<std::string> header = split_csv_line(line);
  const int c_row = find_column(header, schema.row_factor);
  const int c_col = find_column(header, schema.col_factor);
  const int c_y = find_column(header, schema.response);
  std::vector<int> c_xa, c_xb;
  for (const auto& name : schema.xA) c_xa.push_back(find_column(header, name));
  for (const auto& name : schema.xB) c_xb.push_back(find_column(header, name));

  const int dA = static_cast<int>(c_xa.size()) + (schema.add_intercept_A ? 1 : 0);
  const int dB = static_cast<int>(c_xb.size());

  struct RawCell {
    std::vector<double> y;
    std::vector<double> xa;  // row-major, dA per observation
    std::vector<double> xb;
  };
  std::map<std::string, int> row_index, col_index;
  std::vector<std::string> row_labels, col_labels;
  std::map<std::pair<int, int>, RawCell> raw;

  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw CsvParseError("load_csv: row " + std::to_string(lineno) + " has " +
                              std::to_string(fields.size()) +
                              " fields, header has " +
                              std::to_string(header.size()),
                          lineno);
    }
    const std::string& rlab = fields[c_row];
    const std::string& clab = fields[c_col];
    auto [rit, rnew] = row_index.try_emplace(rlab, static_cast<int>(row_labels.size()));
    if (rnew) row_labels.push_back(rlab);
    auto [cit, cnew] = col_index.try_emplace(clab, static_cast<int>(col_labels.size()));
    if (cnew) col_labels.push_back(clab);

    RawCell& cell = raw[{rit->second, cit->second}];
    cell.y.push_back(parse_double(fields[c_y], lineno, schema.response));
    if (schema.add_intercept_A) cell.xa.push_back(1.0);
    for (std::size_t k = 0; k < c_xa.size(); ++k)
      cell.xa.push_back(parse_double(fields[c_xa[k]], lineno, schema.xA[k]));
    for (std::size_t k = 0; k < c_xb.size(); ++k)
      cell.xb.push_back(parse_double(fields[c_xb[k]], lineno, schema.xB[k]));
  }
  if (row_labels.empty()) {
    throw CsvParseError("load_csv: '" + path + "' has no data rows", lineno);
  }

  const int m = static_cast<int>(row_labels.size());
  const int mp = static_cast<int>(col_labels.size());
  std::vector<CellBlock> cells(static_cast<std::size_t>(m) * mp);
  std::vector<std::pair<std::string, std::string>> missing;
  for (int i = 0; i < m; ++i) {
    for (int ip = 0; ip < mp; ++ip) {
      auto it = raw.find({i, ip});
      if (it == raw.end()) {
        missing.emplace_back(row_labels[i], col_labels[ip]);
        continue;
      }
      const RawCell& rc = it->second;
      const int n_cell = static_cast<int>(rc.y.size());
      CellBlock& blk = cells[static_cast<std::size_t>(i) * mp + ip];
      blk.y = Eigen::Map<const Eigen::VectorXd>(rc.y.data(), n_cell);
      blk.XA = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic,
                                              Eigen::Dynamic, Eigen::RowMajor>>(
          rc.xa.data(), n_cell, dA);
      blk.XB = dB > 0
                   ? Eigen::MatrixXd(Eigen::Map<const Eigen::Matrix<
                         double, Eigen::Dynamic, Eigen::Dynamic,
                         Eigen::RowMajor>>(rc.xb.data(), n_cell, dB))
                   : Eigen::MatrixXd(n_cell, 0);
    }
  }
  if (!missing.empty()) {
    std::string msg = "load_csv: grid is incomplete; missing cells:";
    for (const auto& [r, c] : missing) msg += " (" + r + ", " + c + ")";
    throw IncompleteGridError(msg, std::move(missing));
  }
  return CrossedDataset(m, mp, std::move(cells), std::move(row_labels),
                        std::move(col_labels));
}

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void save_csv(const std::string& path, const CrossedDataset& data,
              const ColumnSchema& schema) {
  if (static_cast<int>(schema.xA.size()) != data.d_A() ||
      static_cast<int>(schema.xB.size()) != data.d_B()) {
    throw SchemaError("save_csv: schema column counts do not match dataset");
  }
  std::ofstream out(path);
  if (!out) throw Error("save_csv: cannot open '" + path + "' for writing");

  out << schema.row_factor << ',' << schema.col_factor << ',' << schema.response;
  for (const auto& name : schema.xA) out << ',' << name;
  for (const auto& name : schema.xB) out << ',' << name;
  out << '\n';

  for (int i = 0; i < data.m(); ++i) {
    for (int ip = 0; ip < data.m_prime(); ++ip) {
      const CellBlock& c = data.cell(i, ip);
      for (int j = 0; j < c.y.size(); ++j) {
        out << data.row_labels()[i] << ',' << data.col_labels()[ip] << ','
            << format_double(c.y(j));
        for (int k = 0; k < data.d_A(); ++k) out << ',' << format_double(c.XA(j, k));
        for (int k = 0; k < data.d_B(); ++k) out << ',' << format_double(c.XB(j, k));
        out << '\n';
      }
    }
  }
}

StackedDesign stack_designs(const CrossedDataset& data) {
  StackedDesign s;
  s.XA.resize(data.n_total(), data.d_A());
  s.XB.resize(data.n_total(), data.d_B());
  s.y.resize(data.n_total());
  for (int i = 0; i < data.m(); ++i) {
    for (int ip = 0; ip < data.m_prime(); ++ip) {
      const CellBlock& c = data.cell(i, ip);
      const int off = data.cell_offset(i, ip);
      const int n_cell = data.cell_count(i, ip);
      s.XA.middleRows(off, n_cell) = c.XA;
      s.XB.middleRows(off, n_cell) = c.XB;
      s.y.segment(off, n_cell) = c.y;
    }
  }
  return s;
}

Eigen::MatrixXd build_Z(const CrossedDataset& data) {
  const int dA = data.d_A();
  Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(
      data.n_total(), static_cast<Eigen::Index>(data.m() + data.m_prime()) * dA);
  for (int i = 0; i < data.m(); ++i) {
    for (int ip = 0; ip < data.m_prime(); ++ip) {
      const CellBlock& c = data.cell(i, ip);
      const int off = data.cell_offset(i, ip);
      const int n_cell = data.cell_count(i, ip);
      Z.block(off, i * dA, n_cell, dA) = c.XA;
      Z.block(off, (data.m() + ip) * dA, n_cell, dA) = c.XA;
    }
  }
  return Z;
}

}  // namespace crelmm
