#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace crowdlabel {

namespace detail {

template <typename Visit>
void partitions_rec(std::vector<int>& rgs, std::size_t pos, int used, int k, Visit& visit) {
  const std::size_t n = rgs.size();
  if (pos == n) {
    if (used == k) visit(std::span<const int>(rgs));
    return;
  }
  // Remaining elements must still be able to open the missing blocks.
  if (static_cast<int>(n - pos) < k - used) return;
  const int top = used < k ? used : k - 1;
  for (int b = 0; b <= top; ++b) {
    rgs[pos] = b;
    partitions_rec(rgs, pos + 1, b == used ? used + 1 : used, k, visit);
  }
}

}  // namespace detail

/// Calls `visit(assignment)` once for every partition of {0..n-1} into
/// exactly k nonempty blocks. `assignment[i]` is the block of element i,
/// written as a restricted growth string: blocks are numbered in order of
/// their smallest element. There are S(n, k) calls (Stirling numbers of the
/// second kind); n = 0 with k = 0 yields the single empty partition.
template <typename Visit>
void for_each_set_partition(std::size_t n, int k, Visit&& visit) {
  if (k < 0 || static_cast<std::size_t>(k) > n || (n > 0 && k == 0)) return;
  std::vector<int> rgs(n, 0);
  detail::partitions_rec(rgs, 0, 0, k, visit);
}

/// Number of partitions of an n-set into k blocks.
inline unsigned long long stirling2(std::size_t n, std::size_t k) {
  std::vector<std::vector<unsigned long long>> s(n + 1, std::vector<unsigned long long>(k + 1, 0));
  s[0][0] = 1;
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= k && j <= i; ++j) s[i][j] = j * s[i - 1][j] + s[i - 1][j - 1];
  return s[n][k];
}

}  // namespace crowdlabel
