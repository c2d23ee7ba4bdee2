#pragma once

#include <filesystem>
#include <iosfwd>

#include "gisurrogate/numerics.hpp"

namespace gisur {

// Text format: a header line "rows cols", then one line per row of
// whitespace-separated values printed with 17 significant digits, so a
// write/read cycle reproduces every double bit-exactly.
void write_matrix(std::ostream& os, const Matrix& m);
Matrix read_matrix(std::istream& is);

void save_matrix(const std::filesystem::path& path, const Matrix& m);
Matrix load_matrix(const std::filesystem::path& path);

}  // namespace gisur
