#include "gisurrogate/matrix_io.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>

namespace gisur {

void write_matrix(std::ostream& os, const Matrix& m) {
  os << m.rows() << ' ' << m.cols() << '\n';
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j > 0) os << ' ';
      os << m(i, j);
    }
    os << '\n';
  }
}

Matrix read_matrix(std::istream& is) {
  long rows = 0;
  long cols = 0;
  if (!(is >> rows >> cols) || rows < 1 || cols < 1) {
    throw Error(ErrorKind::Io, "bad matrix header");
  }
  Matrix m(rows, cols);
  for (long i = 0; i < rows; ++i) {
    for (long j = 0; j < cols; ++j) {
      std::string token;
      if (!(is >> token)) {
        throw Error(ErrorKind::Io, "matrix truncated at row " + std::to_string(i));
      }
      // strtod accepts inf/nan spellings; require_finite rejects them below.
      char* end = nullptr;
      m(i, j) = std::strtod(token.c_str(), &end);
      if (end == token.c_str() || *end != '\0') {
        throw Error(ErrorKind::Io, "bad matrix entry '" + token + "'");
      }
    }
  }
  require_finite(m, "loaded matrix");
  return m;
}

void save_matrix(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::Io, "cannot write " + path.string());
  write_matrix(os, m);
  if (!os) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

Matrix load_matrix(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::Io, "cannot read " + path.string());
  return read_matrix(is);
}

}  // namespace gisur
