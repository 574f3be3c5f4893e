#pragma once

#include <cstdint>
#include <vector>

namespace idfm {

// Boolean attention mask over one joint token sequence. Row = query index,
// column = key index, true = attention allowed. Stored as booleans and
// turned into additive 0/-inf behaviour only inside masked attention, so
// comparisons against the brute-force oracle stay exact.
struct AttnMask {
  int seq_len = 0;
  std::vector<std::uint8_t> allowed;  // seq_len * seq_len, row-major

  AttnMask() = default;
  explicit AttnMask(int n) : seq_len(n), allowed(static_cast<std::size_t>(n) * n, 0) {}

  bool at(int i, int j) const { return allowed[static_cast<std::size_t>(i) * seq_len + j] != 0; }
  void set(int i, int j, bool v) { allowed[static_cast<std::size_t>(i) * seq_len + j] = v ? 1 : 0; }
  const std::uint8_t* row(int i) const { return allowed.data() + static_cast<std::size_t>(i) * seq_len; }

  bool operator==(const AttnMask& o) const { return seq_len == o.seq_len && allowed == o.allowed; }
};

}  // namespace idfm
