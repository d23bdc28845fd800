#pragma once

#include <cstddef>
#include <map>
#include <vector>

namespace anubis {

/// Sample multiset stored as element -> multiplicity. Iteration order is the
/// key order, so every statistic computed by walking it is deterministic and
/// independent of the order in which samples arrived.
template <class K>
class Multiset {
 public:
  using key_type = K;
  using container = std::map<K, std::size_t>;
  using const_iterator = typename container::const_iterator;

  Multiset() = default;

  template <class Range>
  static Multiset from_samples(const Range& samples) {
    Multiset m;
    for (const auto& x : samples) m.add(x);
    return m;
  }

  void add(const K& x, std::size_t count = 1) {
    if (count == 0) return;
    counts_[x] += count;
    total_ += count;
  }

  void merge(const Multiset& other) {
    for (const auto& [x, c] : other.counts_) add(x, c);
  }

  std::size_t count(const K& x) const {
    auto it = counts_.find(x);
    return it == counts_.end() ? 0 : it->second;
  }

  std::size_t total() const noexcept { return total_; }
  std::size_t distinct() const noexcept { return counts_.size(); }
  bool empty() const noexcept { return total_ == 0; }

  const_iterator begin() const noexcept { return counts_.begin(); }
  const_iterator end() const noexcept { return counts_.end(); }
  const container& counts() const noexcept { return counts_; }

  /// Expands back into a sorted sample list.
  std::vector<K> to_samples() const {
    std::vector<K> out;
    out.reserve(total_);
    for (const auto& [x, c] : counts_) out.insert(out.end(), c, x);
    return out;
  }

  friend bool operator==(const Multiset& a, const Multiset& b) {
    return a.total_ == b.total_ && a.counts_ == b.counts_;
  }

 private:
  container counts_;
  std::size_t total_ = 0;
};

}  // namespace anubis
