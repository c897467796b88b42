#pragma once

// In-memory B+ tree over string keys. Inner nodes route by separator keys;
// bottom nodes hold the (key, value) entries and are chained in key order.
// Deletion removes emptied nodes but does not rebalance under-full ones.

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "zipcache/errors.hpp"

namespace zipcache {

template <typename V>
class BTreeIndex {
  struct Node {
    bool bottom = true;
    std::vector<std::string> keys;
    std::vector<uint64_t> prefixes;  // first 8 key bytes, big-endian, zero padded
    std::vector<std::unique_ptr<Node>> kids;  // inner: keys.size() + 1
    std::vector<V> vals;                      // bottom: keys.size()
    Node* next = nullptr;
    Node* prev = nullptr;
  };

 public:
  /// Position of one entry; invalidated by any insert or erase.
  class Cursor {
   public:
    Cursor() = default;
    bool valid() const { return node_ != nullptr; }
    const std::string& key() const { return node_->keys[idx_]; }
    V& value() const { return node_->vals[idx_]; }

    Cursor& next() {
      if (++idx_ >= node_->keys.size()) {
        node_ = node_->next;
        idx_ = 0;
        skip_empty_forward();
      }
      return *this;
    }

    Cursor& prev() {
      if (idx_ == 0) {
        node_ = node_->prev;
        while (node_ != nullptr && node_->keys.empty()) node_ = node_->prev;
        idx_ = node_ == nullptr ? 0 : node_->keys.size() - 1;
      } else {
        --idx_;
      }
      return *this;
    }

    bool operator==(const Cursor& o) const { return node_ == o.node_ && (node_ == nullptr || idx_ == o.idx_); }

   private:
    friend class BTreeIndex;
    Cursor(Node* n, size_t i) : node_(n), idx_(i) {}
    void skip_empty_forward() {
      while (node_ != nullptr && node_->keys.empty()) node_ = node_->next;
    }
    Node* node_ = nullptr;
    size_t idx_ = 0;
  };

  struct NodeInfo {
    size_t depth;
    bool bottom;
    size_t entries;
  };

  explicit BTreeIndex(size_t max_fanout = 16) : fanout_(max_fanout), root_(std::make_unique<Node>()) {
    if (max_fanout < 3) throw ContractViolation("B+ tree fanout must be at least 3");
  }

  BTreeIndex(BTreeIndex&&) noexcept = default;
  BTreeIndex& operator=(BTreeIndex&&) noexcept = default;

  size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }
  size_t fanout() const { return fanout_; }

  /// Number of node levels (1 for a tree that is a single bottom node).
  size_t height() const {
    size_t h = 1;
    for (const Node* n = root_.get(); !n->bottom; n = n->kids.front().get()) ++h;
    return h;
  }

  V* find(std::string_view key) {
    Node* n = descend(key);
    const size_t i = lower_index(n, key);
    if (i == n->keys.size() || n->keys[i] != key) return nullptr;
    return &n->vals[i];
  }

  /// Entry with the largest key <= `key`.
  Cursor floor(std::string_view key) {
    Node* n = descend(key);
    Cursor c(n, upper_index(n, key));
    c.prev();
    return c;
  }

  /// First entry with key >= `key`.
  Cursor lower_bound(std::string_view key) {
    Node* n = descend(key);
    Cursor c(n, lower_index(n, key));
    normalize(c);
    return c;
  }

  /// First entry with key > `key`.
  Cursor upper_bound(std::string_view key) {
    Node* n = descend(key);
    Cursor c(n, upper_index(n, key));
    normalize(c);
    return c;
  }

  Cursor begin() {
    Node* n = root_.get();
    while (!n->bottom) n = n->kids.front().get();
    Cursor c(n, 0);
    c.skip_empty_forward();
    return c;
  }

  Cursor end() { return Cursor(); }

  /// Inserts a new entry; returns false (leaving `value` untouched) if the
  /// key already exists.
  bool insert(std::string key, V value) {
    bool inserted = false;
    auto split = insert_rec(root_.get(), key, value, inserted);
    if (split) {
      auto new_root = std::make_unique<Node>();
      new_root->bottom = false;
      new_root->keys.push_back(std::move(split->first));
      new_root->kids.push_back(std::move(root_));
      new_root->kids.push_back(std::move(split->second));
      refresh(new_root.get());
      root_ = std::move(new_root);
    }
    if (inserted) ++size_;
    return inserted;
  }

  /// Removes and returns the value stored under `key`.
  std::optional<V> erase(std::string_view key) {
    std::optional<V> out;
    erase_rec(root_.get(), key, out);
    while (!root_->bottom && root_->kids.size() == 1) {
      std::unique_ptr<Node> only = std::move(root_->kids.front());
      root_ = std::move(only);
    }
    if (!root_->bottom && root_->kids.empty()) root_ = std::make_unique<Node>();
    if (out) --size_;
    return out;
  }

  template <typename F>
  void for_each(F&& f) {
    for (Cursor c = begin(); c.valid(); c.next()) f(c.key(), c.value());
  }

  template <typename F>
  void for_each_node(F&& f) const {
    visit(root_.get(), 0, f);
  }

 private:
  using Split = std::optional<std::pair<std::string, std::unique_ptr<Node>>>;

  static uint64_t prefix_of(std::string_view key) {
    uint64_t p = 0;
    for (size_t i = 0; i < 8; ++i) p = (p << 8) | (i < key.size() ? static_cast<uint8_t>(key[i]) : 0);
    return p;
  }

  static void refresh(Node* n) {
    n->prefixes.resize(n->keys.size());
    for (size_t i = 0; i < n->keys.size(); ++i) n->prefixes[i] = prefix_of(n->keys[i]);
  }

  // Binary searches that settle most comparisons on the cached prefixes.
  static size_t lower_index(const Node* n, std::string_view key) {
    const uint64_t p = prefix_of(key);
    size_t lo = 0;
    size_t hi = n->keys.size();
    while (lo < hi) {
      const size_t mid = (lo + hi) / 2;
      const bool less = n->prefixes[mid] != p ? n->prefixes[mid] < p : std::string_view(n->keys[mid]) < key;
      if (less) {
        lo = mid + 1;
      } else {
        hi = mid;
      }
    }
    return lo;
  }

  static size_t upper_index(const Node* n, std::string_view key) {
    const uint64_t p = prefix_of(key);
    size_t lo = 0;
    size_t hi = n->keys.size();
    while (lo < hi) {
      const size_t mid = (lo + hi) / 2;
      const bool not_greater = n->prefixes[mid] != p ? n->prefixes[mid] < p : std::string_view(n->keys[mid]) <= key;
      if (not_greater) {
        lo = mid + 1;
      } else {
        hi = mid;
      }
    }
    return lo;
  }

  Node* descend(std::string_view key) const {
    Node* n = root_.get();
    while (!n->bottom) n = n->kids[upper_index(n, key)].get();
    return n;
  }

  static void normalize(Cursor& c) {
    if (c.node_ != nullptr && c.idx_ >= c.node_->keys.size()) {
      c.node_ = c.node_->next;
      c.idx_ = 0;
      c.skip_empty_forward();
    }
  }

  Split insert_rec(Node* n, std::string& key, V& value, bool& inserted) {
    if (n->bottom) {
      const size_t pos = lower_index(n, key);
      if (pos != n->keys.size() && n->keys[pos] == key) return std::nullopt;
      n->keys.insert(n->keys.begin() + static_cast<std::ptrdiff_t>(pos), std::move(key));
      n->vals.insert(n->vals.begin() + static_cast<std::ptrdiff_t>(pos), std::move(value));
      inserted = true;
      if (n->keys.size() <= fanout_) {
        refresh(n);
        return std::nullopt;
      }

      auto right = std::make_unique<Node>();
      const size_t mid = n->keys.size() / 2;
      right->keys.assign(std::make_move_iterator(n->keys.begin() + static_cast<std::ptrdiff_t>(mid)),
                         std::make_move_iterator(n->keys.end()));
      right->vals.assign(std::make_move_iterator(n->vals.begin() + static_cast<std::ptrdiff_t>(mid)),
                         std::make_move_iterator(n->vals.end()));
      n->keys.resize(mid);
      n->vals.erase(n->vals.begin() + static_cast<std::ptrdiff_t>(mid), n->vals.end());
      refresh(n);
      refresh(right.get());
      right->next = n->next;
      right->prev = n;
      if (n->next != nullptr) n->next->prev = right.get();
      n->next = right.get();
      std::string sep = right->keys.front();
      return std::make_pair(std::move(sep), std::move(right));
    }

    const size_t idx = upper_index(n, key);
    auto child_split = insert_rec(n->kids[idx].get(), key, value, inserted);
    if (!child_split) return std::nullopt;
    n->keys.insert(n->keys.begin() + static_cast<std::ptrdiff_t>(idx), std::move(child_split->first));
    n->kids.insert(n->kids.begin() + static_cast<std::ptrdiff_t>(idx + 1), std::move(child_split->second));
    if (n->kids.size() <= fanout_) {
      refresh(n);
      return std::nullopt;
    }

    auto right = std::make_unique<Node>();
    right->bottom = false;
    const size_t mid = n->keys.size() / 2;
    std::string sep = std::move(n->keys[mid]);
    right->keys.assign(std::make_move_iterator(n->keys.begin() + static_cast<std::ptrdiff_t>(mid + 1)),
                       std::make_move_iterator(n->keys.end()));
    right->kids.assign(std::make_move_iterator(n->kids.begin() + static_cast<std::ptrdiff_t>(mid + 1)),
                       std::make_move_iterator(n->kids.end()));
    n->keys.resize(mid);
    n->kids.erase(n->kids.begin() + static_cast<std::ptrdiff_t>(mid + 1), n->kids.end());
    refresh(n);
    refresh(right.get());
    return std::make_pair(std::move(sep), std::move(right));
  }

  void erase_rec(Node* n, std::string_view key, std::optional<V>& out) {
    if (n->bottom) {
      const size_t pos = lower_index(n, key);
      if (pos == n->keys.size() || n->keys[pos] != key) return;
      out.emplace(std::move(n->vals[pos]));
      n->keys.erase(n->keys.begin() + static_cast<std::ptrdiff_t>(pos));
      n->vals.erase(n->vals.begin() + static_cast<std::ptrdiff_t>(pos));
      refresh(n);
      return;
    }
    const size_t idx = upper_index(n, key);
    Node* child = n->kids[idx].get();
    erase_rec(child, key, out);
    const bool child_empty = child->bottom ? child->keys.empty() : child->kids.empty();
    if (!child_empty) return;
    if (child->bottom) {
      if (child->prev != nullptr) child->prev->next = child->next;
      if (child->next != nullptr) child->next->prev = child->prev;
    }
    n->kids.erase(n->kids.begin() + static_cast<std::ptrdiff_t>(idx));
    if (!n->keys.empty()) {
      n->keys.erase(n->keys.begin() + static_cast<std::ptrdiff_t>(idx == 0 ? 0 : idx - 1));
    }
    refresh(n);
  }

  template <typename F>
  static void visit(const Node* n, size_t depth, F& f) {
    f(NodeInfo{depth, n->bottom, n->bottom ? n->keys.size() : n->kids.size()});
    if (!n->bottom) {
      for (const auto& k : n->kids) visit(k.get(), depth + 1, f);
    }
  }

  size_t fanout_;
  std::unique_ptr<Node> root_;
  size_t size_ = 0;
};

}  // namespace zipcache
