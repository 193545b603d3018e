#pragma once

// Concurrent open-addressed spatial hash store. Keys are 3D voxel indices
// (or 2D block indices for the block directory) hashed by the classic
// prime-multiply-xor scheme. Collisions resolve by linear or quadratic
// probing with a cumulative step (s <- s + f(i), f(i)=2i+1 or i^2+1), or by
// robin-hood stride-1 probing with backward-shift deletion. Probing gives up
// after a fixed budget of slots; the insert is then counted as dropped
// rather than rehashing, which keeps latency bounded at the cost of a
// measurable dropout ratio.
//
// Concurrency model: one atomic byte per slot packs the slot state
// (empty/occupied/tombstone) and a spin-lock bit. Readers copy entries under
// the slot lock; in-place value updates lock only their slot. Robin-hood
// structural changes (fresh inserts, deletions) move *other* keys' slots and
// therefore serialize on a per-map mutex; linear/quadratic never move
// resident entries and need no such serialization (tombstones are only
// reclaimed in place).

#include "meshodom/geometry.hpp"

#include <atomic>
#include <cstdint>
#include <cstring>
#include <istream>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace meshodom {

inline constexpr std::uint64_t kHashPrime1 = 73856093ull;
inline constexpr std::uint64_t kHashPrime2 = 19349663ull;
inline constexpr std::uint64_t kHashPrime3 = 83492791ull;

// 64-bit avalanche finalizer (Murmur3 fmix64). The multiply-xor combine
// below is lattice-structured for sequential grid coordinates, which piles
// probe runs into power-of-two tables; finalizing restores uniform bits.
inline std::uint64_t mix64(std::uint64_t h) {
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdull;
  h ^= h >> 33;
  h *= 0xc4ceb9fe1a85ec53ull;
  h ^= h >> 33;
  return h;
}

inline std::uint64_t hash3_raw(const VoxelKey& k) {
  // int32 -> int64 sign extension, then two's-complement wrap into uint64;
  // products and xors are all mod 2^64.
  const auto ux = static_cast<std::uint64_t>(static_cast<std::int64_t>(k.x));
  const auto uy = static_cast<std::uint64_t>(static_cast<std::int64_t>(k.y));
  const auto uz = static_cast<std::uint64_t>(static_cast<std::int64_t>(k.z));
  return mix64((ux * kHashPrime1) ^ (uy * kHashPrime2) ^ (uz * kHashPrime3));
}

inline std::size_t hash3_mod(const VoxelKey& k, std::size_t n) {
  return static_cast<std::size_t>(hash3_raw(k) % n);
}

struct BlockKey {
  std::int32_t x = 0;
  std::int32_t y = 0;

  bool operator==(const BlockKey&) const = default;
  bool operator<(const BlockKey& o) const {
    return x != o.x ? x < o.x : y < o.y;
  }
};

inline std::uint64_t hash2_raw(const BlockKey& k) {
  const auto ux = static_cast<std::uint64_t>(static_cast<std::int64_t>(k.x));
  const auto uy = static_cast<std::uint64_t>(static_cast<std::int64_t>(k.y));
  return mix64((ux * kHashPrime1) ^ (uy * kHashPrime2));
}

inline std::size_t hash2_mod(const BlockKey& k, std::size_t n) {
  return static_cast<std::size_t>(hash2_raw(k) % n);
}

enum class ProbeStrategy { linear, quadratic, robin_hood };

inline const char* to_string(ProbeStrategy s) {
  switch (s) {
    case ProbeStrategy::linear: return "linear";
    case ProbeStrategy::quadratic: return "quadratic";
    case ProbeStrategy::robin_hood: return "robin_hood";
  }
  return "?";
}

inline std::optional<ProbeStrategy> parse_probe_strategy(const std::string& s) {
  if (s == "linear") return ProbeStrategy::linear;
  if (s == "quadratic") return ProbeStrategy::quadratic;
  if (s == "robin_hood" || s == "robin-hood") return ProbeStrategy::robin_hood;
  return std::nullopt;
}

// Offset of the i-th probe (0-based) from the home slot. The per-step
// increments f(i)=2i+1 / f(i)=i^2+1 accumulate, so for linear the i-th
// offset is i^2+2i = (i+1)^2 - 1 and for quadratic it is i(i+1)(2i+1)/6 + i.
inline std::size_t probe_offset(ProbeStrategy s, int i) {
  const auto u = static_cast<std::size_t>(i);
  switch (s) {
    case ProbeStrategy::linear: return u * u + 2 * u;
    case ProbeStrategy::quadratic: return u * (u + 1) * (2 * u + 1) / 6 + u;
    case ProbeStrategy::robin_hood: return u;
  }
  return u;
}

enum class InsertOutcome { inserted, already_present, dropped };

enum class StorePhase { idle, integrate, extract, maintain };

inline const char* to_string(StorePhase p) {
  switch (p) {
    case StorePhase::idle: return "idle";
    case StorePhase::integrate: return "integrate";
    case StorePhase::extract: return "extract";
    case StorePhase::maintain: return "maintain";
  }
  return "?";
}

template <class Key, class Value, class Hash>
class ConcurrentOpenTable {
 public:
  struct Entry {
    Key key{};
    Value value{};
  };

  struct UpdateResult {
    InsertOutcome outcome = InsertOutcome::dropped;
    Entry entry{};
  };

  ConcurrentOpenTable(std::size_t capacity, ProbeStrategy strategy,
                      int probe_budget = 10)
      : capacity_(std::max<std::size_t>(capacity, 64)),
        strategy_(strategy),
        t_max_(probe_budget),
        slots_(capacity_),
        meta_(new std::atomic<std::uint8_t>[capacity_]) {
    for (std::size_t i = 0; i < capacity_; ++i)
      meta_[i].store(kEmpty, std::memory_order_relaxed);
    if (strategy_ == ProbeStrategy::robin_hood) {
      disp_.reset(new std::atomic<std::uint8_t>[capacity_]);
      for (std::size_t i = 0; i < capacity_; ++i)
        disp_[i].store(0, std::memory_order_relaxed);
    }
  }

  ConcurrentOpenTable(const ConcurrentOpenTable&) = delete;
  ConcurrentOpenTable& operator=(const ConcurrentOpenTable&) = delete;

  std::size_t capacity() const { return capacity_; }
  ProbeStrategy strategy() const { return strategy_; }
  int probe_budget() const { return t_max_; }
  std::size_t size() const { return size_.load(std::memory_order_relaxed); }
  std::uint64_t attempt_count() const {
    return attempts_.load(std::memory_order_relaxed);
  }
  std::uint64_t dropped_count() const {
    return dropped_.load(std::memory_order_relaxed);
  }
  double load_factor() const {
    return static_cast<double>(size()) / static_cast<double>(capacity_);
  }
  // Percentage of unique-key insertion attempts that were rejected by an
  // exhausted probe chain (duplicate-key updates are not attempts).
  double dropout_ratio() const {
    const auto a = attempt_count();
    if (a == 0) return 0.0;
    return 100.0 * static_cast<double>(dropped_count()) /
           static_cast<double>(a);
  }

  void set_phase(StorePhase p) { phase_.store(static_cast<int>(p)); }
  StorePhase phase() const {
    return static_cast<StorePhase>(phase_.load(std::memory_order_relaxed));
  }

  std::size_t home_slot(const Key& key) const {
    return static_cast<std::size_t>(Hash{}(key) % capacity_);
  }

  // Looks up `key`, inserting a default-constructed value when absent, and
  // applies `updater(Value&, bool inserted_fresh)` under the slot lock.
  // Returns the outcome plus a post-update copy of the entry. When the probe
  // budget is exhausted, the outcome is `dropped` and the entry is empty.
  template <class Updater>
  UpdateResult get_or_insert_update(const Key& key, Updater&& updater) {
    require_write_phase();
    if (strategy_ == ProbeStrategy::robin_hood)
      return robin_update(key, updater);

    for (;;) {
      const std::size_t home = home_slot(key);
      std::size_t first_free = kNoSlot;  // first tombstone in probe order
      std::size_t empty_slot = kNoSlot;
      bool rescan = false;
      for (int i = 0; i < t_max_; ++i) {
        const std::size_t s = (home + probe_offset(strategy_, i)) % capacity_;
        const std::uint8_t st = settled_state(s);
        if (st == kEmpty) {
          empty_slot = s;
          break;
        }
        if (st == kTombstone) {
          if (first_free == kNoSlot) first_free = s;
          continue;
        }
        // Occupied: the key is immutable while the slot is occupied, so it
        // can be inspected without the lock.
        if (slots_[s].key == key) {
          lock_slot(s);
          if (state_of(meta_[s].load(std::memory_order_relaxed)) == kOccupied &&
              slots_[s].key == key) {
            updater(slots_[s].value, false);
            UpdateResult r{InsertOutcome::already_present, slots_[s]};
            unlock_keep_state(s);
            return r;
          }
          unlock_keep_state(s);
          rescan = true;  // slot mutated under us
          break;
        }
      }
      if (rescan) continue;

      const std::size_t target =
          first_free != kNoSlot ? first_free : empty_slot;
      if (target == kNoSlot) {
        // Whole probe window is occupied by other keys: the insert fails.
        attempts_.fetch_add(1, std::memory_order_relaxed);
        dropped_.fetch_add(1, std::memory_order_relaxed);
        return UpdateResult{InsertOutcome::dropped, {}};
      }

      lock_slot(target);
      const std::uint8_t st =
          state_of(meta_[target].load(std::memory_order_relaxed));
      if (st == kEmpty || st == kTombstone) {
        slots_[target].key = key;
        slots_[target].value = Value{};
        updater(slots_[target].value, true);
        UpdateResult r{InsertOutcome::inserted, slots_[target]};
        unlock_with_state(target, kOccupied);
        size_.fetch_add(1, std::memory_order_relaxed);
        attempts_.fetch_add(1, std::memory_order_relaxed);
        return r;
      }
      if (slots_[target].key == key) {
        // Another thread inserted this key right here.
        updater(slots_[target].value, false);
        UpdateResult r{InsertOutcome::already_present, slots_[target]};
        unlock_keep_state(target);
        return r;
      }
      // A different key claimed our slot; rescan from scratch.
      unlock_keep_state(target);
    }
  }

  // Algorithm-style insert: place `entry` if its key is absent; an existing
  // entry is left untouched.
  InsertOutcome insert(const Entry& entry) {
    const auto r = get_or_insert_update(entry.key, [&](Value& v, bool fresh) {
      if (fresh) v = entry.value;
    });
    return r.outcome;
  }

  std::optional<Entry> find(const Key& key) const {
    require_read_phase();
    for (;;) {
      const std::size_t home = home_slot(key);
      bool retry = false;
      for (int i = 0; i < t_max_; ++i) {
        const std::size_t s = (home + probe_offset(strategy_, i)) % capacity_;
        const std::uint8_t st = settled_state(s);
        if (st == kEmpty) return std::nullopt;
        if (st == kTombstone) continue;
        if (slots_[s].key == key) {
          lock_slot(s);
          if (state_of(meta_[s].load(std::memory_order_relaxed)) ==
                  kOccupied &&
              slots_[s].key == key) {
            Entry copy = slots_[s];
            unlock_keep_state(s);
            return copy;
          }
          unlock_keep_state(s);
          retry = true;  // slot mutated mid-read
          break;
        }
      }
      if (!retry) return std::nullopt;
    }
  }

  bool contains(const Key& key) const { return find(key).has_value(); }

  // Serial erase of all entries matching pred; `on_delete` observes each
  // removed entry. Only legal outside the integrate/extract phases.
  template <class Pred, class OnDelete>
  std::size_t erase_if(Pred&& pred, OnDelete&& on_delete) {
    require_maintain_phase();
    if (strategy_ == ProbeStrategy::robin_hood)
      return robin_erase_if(pred, on_delete);
    std::size_t erased = 0;
    for (std::size_t s = 0; s < capacity_; ++s) {
      if (state_of(meta_[s].load(std::memory_order_relaxed)) != kOccupied)
        continue;
      lock_slot(s);
      if (state_of(meta_[s].load(std::memory_order_relaxed)) == kOccupied &&
          pred(const_cast<const Entry&>(slots_[s]))) {
        on_delete(const_cast<const Entry&>(slots_[s]));
        unlock_with_state(s, kTombstone);
        size_.fetch_sub(1, std::memory_order_relaxed);
        ++erased;
      } else {
        unlock_keep_state(s);
      }
    }
    return erased;
  }

  std::size_t erase_one(const Key& key) {
    return erase_if(
        [&](const Entry& e) { return e.key == key; }, [](const Entry&) {});
  }

  // Serial iteration over occupied slots (slot order, deterministic for a
  // fixed table state).
  template <class Fn>
  void for_each(Fn&& fn) const {
    for (std::size_t s = 0; s < capacity_; ++s) {
      if (state_of(meta_[s].load(std::memory_order_acquire)) != kOccupied)
        continue;
      fn(const_cast<const Entry&>(slots_[s]));
    }
  }

  // Displacement of the entry at `slot` from its home (robin-hood only;
  // exposed for tests).
  int displacement_at(std::size_t slot) const {
    return disp_ ? static_cast<int>(disp_[slot].load()) : 0;
  }

 private:
  static constexpr std::uint8_t kEmpty = 0;
  static constexpr std::uint8_t kOccupied = 1;
  static constexpr std::uint8_t kTombstone = 2;
  static constexpr std::uint8_t kStateMask = 0x3;
  static constexpr std::uint8_t kLockBit = 0x80;
  static constexpr std::size_t kNoSlot = std::numeric_limits<std::size_t>::max();

  static std::uint8_t state_of(std::uint8_t m) { return m & kStateMask; }
  static bool locked(std::uint8_t m) { return (m & kLockBit) != 0; }

  void lock_slot(std::size_t s) const {
    int spins = 0;
    for (;;) {
      std::uint8_t m = meta_[s].load(std::memory_order_relaxed);
      if (!locked(m) &&
          meta_[s].compare_exchange_weak(m, m | kLockBit,
                                         std::memory_order_acquire,
                                         std::memory_order_relaxed))
        return;
      if (++spins >= 32) {
        spins = 0;
        std::this_thread::yield();
      }
    }
  }

  void unlock_keep_state(std::size_t s) const {
    meta_[s].fetch_and(static_cast<std::uint8_t>(~kLockBit),
                       std::memory_order_release);
  }

  void unlock_with_state(std::size_t s, std::uint8_t st) const {
    meta_[s].store(st, std::memory_order_release);
  }

  // Reads the slot state, waiting out the transient empty-but-locked window
  // in which a writer has claimed a free slot but not yet published its key.
  std::uint8_t settled_state(std::size_t s) const {
    int spins = 0;
    for (;;) {
      const std::uint8_t m = meta_[s].load(std::memory_order_acquire);
      if (!(locked(m) && state_of(m) != kOccupied)) return state_of(m);
      if (++spins >= 32) {
        spins = 0;
        std::this_thread::yield();
      }
    }
  }

  void require_write_phase() const {
    const auto p = phase();
    if (p == StorePhase::extract || p == StorePhase::maintain)
      throw std::logic_error(std::string("hash store write during ") +
                             to_string(p) + " phase");
  }

  void require_read_phase() const {
    if (phase() == StorePhase::maintain)
      throw std::logic_error("hash store read during maintain phase");
  }

  void require_maintain_phase() const {
    const auto p = phase();
    if (p == StorePhase::integrate || p == StorePhase::extract)
      throw std::logic_error(std::string("hash store erase during ") +
                             to_string(p) + " phase");
  }

  template <class Updater>
  UpdateResult robin_update(const Key& key, Updater&& updater) {
    // Fast path: in-place update of a resident key needs no structural lock.
    const std::size_t home = home_slot(key);
    for (int i = 0; i < t_max_; ++i) {
      const std::size_t s = (home + static_cast<std::size_t>(i)) % capacity_;
      const std::uint8_t st = settled_state(s);
      if (st == kEmpty) break;
      if (slots_[s].key == key) {
        lock_slot(s);
        if (state_of(meta_[s].load(std::memory_order_relaxed)) == kOccupied &&
            slots_[s].key == key) {
          updater(slots_[s].value, false);
          UpdateResult r{InsertOutcome::already_present, slots_[s]};
          unlock_keep_state(s);
          return r;
        }
        unlock_keep_state(s);
        break;  // displaced mid-flight; fall through to the mutexed path
      }
    }

    // Key not resident (or it moved mid-scan); structural work serializes
    // here. Re-scan under the mutex: displacements cannot run concurrently
    // now, so a hit is stable and a miss is definitive.
    std::lock_guard<std::mutex> g(structural_);
    for (int i = 0; i < t_max_; ++i) {
      const std::size_t s = (home + static_cast<std::size_t>(i)) % capacity_;
      const std::uint8_t st = settled_state(s);
      if (st == kEmpty) break;
      if (slots_[s].key == key) {
        lock_slot(s);
        updater(slots_[s].value, false);
        UpdateResult r{InsertOutcome::already_present, slots_[s]};
        unlock_keep_state(s);
        return r;
      }
    }
    return robin_insert_locked(key, updater);
  }

  // Robin-hood displacement insert; caller holds structural_.
  template <class Updater>
  UpdateResult robin_insert_locked(const Key& key, Updater&& updater) {
    attempts_.fetch_add(1, std::memory_order_relaxed);

    Entry carry;
    carry.key = key;
    carry.value = Value{};
    updater(carry.value, true);
    const Entry result_copy = carry;

    int carry_disp = 0;
    bool original_is_carry = true;  // once false, the new key is resident
    std::size_t s = home_slot(key);
    for (;;) {
      if (carry_disp >= t_max_) {
        dropped_.fetch_add(1, std::memory_order_relaxed);
        if (original_is_carry) return UpdateResult{InsertOutcome::dropped, {}};
        // A displaced victim ran out of budget: the original landed but a
        // resident entry was lost.
        size_.fetch_sub(1, std::memory_order_relaxed);
        return UpdateResult{InsertOutcome::inserted, result_copy};
      }
      lock_slot(s);
      const std::uint8_t st =
          state_of(meta_[s].load(std::memory_order_relaxed));
      if (st == kEmpty) {
        slots_[s] = carry;
        disp_[s].store(static_cast<std::uint8_t>(carry_disp));
        unlock_with_state(s, kOccupied);
        // A relocated victim is size-neutral; only the new key grows the
        // table, whether it landed here or earlier via a swap.
        if (original_is_carry) size_.fetch_add(1, std::memory_order_relaxed);
        return UpdateResult{InsertOutcome::inserted, result_copy};
      }
      const int resident_disp = static_cast<int>(disp_[s].load());
      if (resident_disp < carry_disp) {
        std::swap(slots_[s], carry);
        disp_[s].store(static_cast<std::uint8_t>(carry_disp));
        carry_disp = resident_disp;
        if (original_is_carry) {
          original_is_carry = false;
          size_.fetch_add(1, std::memory_order_relaxed);
        }
      }
      unlock_keep_state(s);
      s = (s + 1) % capacity_;
      ++carry_disp;
    }
  }

  template <class Pred, class OnDelete>
  std::size_t robin_erase_if(Pred&& pred, OnDelete&& on_delete) {
    std::lock_guard<std::mutex> g(structural_);
    std::vector<Key> doomed;
    for (std::size_t s = 0; s < capacity_; ++s) {
      if (state_of(meta_[s].load(std::memory_order_relaxed)) != kOccupied)
        continue;
      if (pred(const_cast<const Entry&>(slots_[s])))
        doomed.push_back(slots_[s].key);
    }
    std::size_t erased = 0;
    for (const Key& key : doomed) erased += robin_backshift_erase(key, on_delete);
    return erased;
  }

  template <class OnDelete>
  std::size_t robin_backshift_erase(const Key& key, OnDelete&& on_delete) {
    const std::size_t home = home_slot(key);
    std::size_t s = kNoSlot;
    // Robin-hood tables have no tombstones: scan until empty. A key can sit
    // beyond its insertion-time budget only if later displacements pushed it
    // there, which the budget forbids, so t_max_ still bounds the scan.
    for (int i = 0; i < t_max_; ++i) {
      const std::size_t c = (home + static_cast<std::size_t>(i)) % capacity_;
      const std::uint8_t st = state_of(meta_[c].load(std::memory_order_relaxed));
      if (st == kEmpty) break;
      if (st == kOccupied && slots_[c].key == key) {
        s = c;
        break;
      }
    }
    if (s == kNoSlot) return 0;
    on_delete(const_cast<const Entry&>(slots_[s]));
    size_.fetch_sub(1, std::memory_order_relaxed);
    // Backward shift: pull successors with nonzero displacement one slot
    // toward their home until the chain is tight again.
    std::size_t hole = s;
    for (;;) {
      const std::size_t next = (hole + 1) % capacity_;
      const std::uint8_t st =
          state_of(meta_[next].load(std::memory_order_relaxed));
      if (st != kOccupied || disp_[next].load() == 0) {
        meta_[hole].store(kEmpty, std::memory_order_release);
        return 1;
      }
      slots_[hole] = slots_[next];
      disp_[hole].store(static_cast<std::uint8_t>(disp_[next].load() - 1));
      meta_[hole].store(kOccupied, std::memory_order_release);
      hole = next;
    }
  }

  std::size_t capacity_;
  ProbeStrategy strategy_;
  int t_max_;
  std::vector<Entry> slots_;
  std::unique_ptr<std::atomic<std::uint8_t>[]> meta_;
  std::unique_ptr<std::atomic<std::uint8_t>[]> disp_;  // robin-hood only
  mutable std::mutex structural_;
  std::atomic<std::size_t> size_{0};
  std::atomic<std::uint64_t> attempts_{0};
  std::atomic<std::uint64_t> dropped_{0};
  std::atomic<int> phase_{static_cast<int>(StorePhase::idle)};
};

// ---------------------------------------------------------------------------
// Voxel store

struct VoxelData {
  double sdf = 0.0;
  double weight = 0.0;
  Eigen::Vector3f normal = Eigen::Vector3f::Zero();
  std::uint32_t last_frame = 0;
};

struct Voxel {
  VoxelKey key;
  VoxelData data;
};

struct VoxelKeyHash {
  std::uint64_t operator()(const VoxelKey& k) const { return hash3_raw(k); }
};

struct BlockKeyHash {
  std::uint64_t operator()(const BlockKey& k) const { return hash2_raw(k); }
};

class VoxelHashMap {
 public:
  using Table = ConcurrentOpenTable<VoxelKey, VoxelData, VoxelKeyHash>;
  using UpdateResult = Table::UpdateResult;

  VoxelHashMap(std::size_t capacity, ProbeStrategy strategy, Vec3 resolution,
               int probe_budget = 10)
      : table_(capacity, strategy, probe_budget), resolution_(resolution) {}

  VoxelHashMap(std::size_t capacity, ProbeStrategy strategy,
               double resolution = 0.1, int probe_budget = 10)
      : VoxelHashMap(capacity, strategy,
                     Vec3(resolution, resolution, resolution), probe_budget) {}

  const Vec3& resolution() const { return resolution_; }
  Vec3 center_of(const VoxelKey& k) const {
    return voxel_center(k, resolution_);
  }

  std::size_t capacity() const { return table_.capacity(); }
  std::size_t size() const { return table_.size(); }
  double load_factor() const { return table_.load_factor(); }
  std::uint64_t attempt_count() const { return table_.attempt_count(); }
  std::uint64_t dropped_count() const { return table_.dropped_count(); }
  double dropout_ratio() const { return table_.dropout_ratio(); }
  ProbeStrategy strategy() const { return table_.strategy(); }
  std::size_t home_slot(const VoxelKey& k) const { return table_.home_slot(k); }

  void set_phase(StorePhase p) { table_.set_phase(p); }
  StorePhase phase() const { return table_.phase(); }

  template <class Updater>
  UpdateResult get_or_insert_update(const VoxelKey& key, Updater&& updater) {
    return table_.get_or_insert_update(key, std::forward<Updater>(updater));
  }

  InsertOutcome insert(const Voxel& v) {
    return table_.insert(Table::Entry{v.key, v.data});
  }

  std::optional<Voxel> find(const VoxelKey& key) const {
    auto e = table_.find(key);
    if (!e) return std::nullopt;
    return Voxel{e->key, e->value};
  }

  template <class Fn>
  void for_each(Fn&& fn) const {
    table_.for_each([&](const Table::Entry& e) { fn(Voxel{e.key, e.value}); });
  }

  static bool expired(const VoxelKey& key, const VoxelData& data,
                      const Vec3& resolution, const PoseSE3& pose,
                      std::uint32_t current_frame, double retire_radius,
                      std::uint32_t min_age) {
    const Vec3 c = voxel_center(key, resolution);
    const double dx = c.x() - pose.translation.x();
    const double dy = c.y() - pose.translation.y();
    const bool far_away =
        std::sqrt(dx * dx + dy * dy) > retire_radius;
    const bool stale =
        current_frame > data.last_frame &&
        (current_frame - data.last_frame) > min_age;
    return far_away && stale;
  }

  // Removes voxels that are both beyond the horizontal retire radius and
  // older than min_age frames. `on_delete` sees each removed voxel (used to
  // keep the block directory consistent).
  template <class OnDelete>
  std::size_t delete_expired(const PoseSE3& pose, std::uint32_t current_frame,
                             double retire_radius, std::uint32_t min_age,
                             OnDelete&& on_delete) {
    return table_.erase_if(
        [&](const Table::Entry& e) {
          return expired(e.key, e.value, resolution_, pose, current_frame,
                         retire_radius, min_age);
        },
        [&](const Table::Entry& e) { on_delete(Voxel{e.key, e.value}); });
  }

  std::size_t delete_expired(const PoseSE3& pose, std::uint32_t current_frame,
                             double retire_radius, std::uint32_t min_age) {
    return delete_expired(pose, current_frame, retire_radius, min_age,
                          [](const Voxel&) {});
  }

  // Binary snapshot: 16-byte header (magic 'MLVX', u32 version, u64 count)
  // followed by 36-byte records (i32 key xyz, f32 sdf/weight/normal xyz,
  // u32 last_frame), little-endian.
  void save_snapshot(std::ostream& out) const {
    const char magic[4] = {'M', 'L', 'V', 'X'};
    const std::uint32_t version = 1;
    const std::uint64_t count = size();
    out.write(magic, 4);
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&count), 8);
    for_each([&](const Voxel& v) {
      write_record(out, v);
    });
    if (!out) throw std::runtime_error("voxel snapshot write failed");
  }

  std::size_t load_snapshot(std::istream& in) {
    char magic[4] = {0, 0, 0, 0};
    std::uint32_t version = 0;
    std::uint64_t count = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&version), 4);
    in.read(reinterpret_cast<char*>(&count), 8);
    if (!in || std::memcmp(magic, "MLVX", 4) != 0)
      throw std::runtime_error("voxel snapshot: bad magic");
    if (version != 1)
      throw std::runtime_error("voxel snapshot: unsupported version " +
                               std::to_string(version));
    std::size_t loaded = 0;
    for (std::uint64_t i = 0; i < count; ++i) {
      Voxel v = read_record(in);
      if (!in)
        throw std::runtime_error("voxel snapshot: truncated at record " +
                                 std::to_string(i));
      if (insert(v) == InsertOutcome::inserted) ++loaded;
    }
    return loaded;
  }

 private:
  static void write_record(std::ostream& out, const Voxel& v) {
    out.write(reinterpret_cast<const char*>(&v.key.x), 4);
    out.write(reinterpret_cast<const char*>(&v.key.y), 4);
    out.write(reinterpret_cast<const char*>(&v.key.z), 4);
    const float sdf = static_cast<float>(v.data.sdf);
    const float weight = static_cast<float>(v.data.weight);
    out.write(reinterpret_cast<const char*>(&sdf), 4);
    out.write(reinterpret_cast<const char*>(&weight), 4);
    const float n[3] = {v.data.normal.x(), v.data.normal.y(),
                        v.data.normal.z()};
    out.write(reinterpret_cast<const char*>(n), 12);
    out.write(reinterpret_cast<const char*>(&v.data.last_frame), 4);
  }

  static Voxel read_record(std::istream& in) {
    Voxel v;
    float sdf = 0, weight = 0, n[3] = {0, 0, 0};
    in.read(reinterpret_cast<char*>(&v.key.x), 4);
    in.read(reinterpret_cast<char*>(&v.key.y), 4);
    in.read(reinterpret_cast<char*>(&v.key.z), 4);
    in.read(reinterpret_cast<char*>(&sdf), 4);
    in.read(reinterpret_cast<char*>(&weight), 4);
    in.read(reinterpret_cast<char*>(n), 12);
    in.read(reinterpret_cast<char*>(&v.data.last_frame), 4);
    v.data.sdf = sdf;
    v.data.weight = weight;
    v.data.normal = Eigen::Vector3f(n[0], n[1], n[2]);
    return v;
  }

  Table table_;
  Vec3 resolution_;
};

}  // namespace meshodom
