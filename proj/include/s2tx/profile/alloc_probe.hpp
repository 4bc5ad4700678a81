#pragma once

#include <malloc.h>

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <string>

/// Heap accounting through glibc malloc interposition. Exactly one
/// translation unit of a binary expands S2TX_INSTALL_ALLOC_PROBE at global
/// scope; binaries without it fall back to resident-set measurements.

extern "C" bool s2tx_alloc_probe_installed() __attribute__((weak));

namespace s2tx::alloc_probe {

struct Counters {
  std::atomic<std::int64_t> current{0};
  std::atomic<std::int64_t> peak{0};
};

inline Counters& counters() {
  static Counters c;
  return c;
}

inline void on_alloc(void* p) {
  if (!p) return;
  auto& c = counters();
  const auto now = c.current.fetch_add(static_cast<std::int64_t>(malloc_usable_size(p)), std::memory_order_relaxed) +
                   static_cast<std::int64_t>(malloc_usable_size(p));
  auto peak = c.peak.load(std::memory_order_relaxed);
  while (now > peak && !c.peak.compare_exchange_weak(peak, now, std::memory_order_relaxed)) {
  }
}

inline void on_free(void* p) {
  if (!p) return;
  counters().current.fetch_sub(static_cast<std::int64_t>(malloc_usable_size(p)), std::memory_order_relaxed);
}

inline bool available() { return s2tx_alloc_probe_installed != nullptr && s2tx_alloc_probe_installed(); }

inline std::int64_t current_bytes() { return counters().current.load(); }

/// Starts a measurement window; returns the live byte count at its start.
inline std::int64_t begin_window() {
  const auto now = counters().current.load();
  counters().peak.store(now);
  return now;
}

/// Peak live bytes above `baseline` since begin_window().
inline std::int64_t peak_since(std::int64_t baseline) { return counters().peak.load() - baseline; }

inline std::int64_t proc_status_kb(const std::string& field) {
  std::ifstream in("/proc/self/status");
  std::string line;
  while (std::getline(in, line))
    if (line.compare(0, field.size(), field) == 0 && line[field.size()] == ':')
      return std::strtoll(line.c_str() + field.size() + 1, nullptr, 10);
  return -1;
}

/// Resets the kernel's peak-RSS counter; false when not permitted.
inline bool reset_rss_peak() {
  std::ofstream out("/proc/self/clear_refs");
  if (!out) return false;
  out << "5";
  return static_cast<bool>(out.flush());
}

}  // namespace s2tx::alloc_probe

extern "C" {
void* __libc_malloc(size_t);
void __libc_free(void*);
void* __libc_calloc(size_t, size_t);
void* __libc_realloc(void*, size_t);
void* __libc_memalign(size_t, size_t);
}

#define S2TX_INSTALL_ALLOC_PROBE                                                             \
  extern "C" {                                                                              \
  bool s2tx_alloc_probe_installed() { return true; }                                       \
  void* malloc(size_t n) {                                                                  \
    void* p = __libc_malloc(n);                                                             \
    ::s2tx::alloc_probe::on_alloc(p);                                                       \
    return p;                                                                               \
  }                                                                                         \
  void free(void* p) {                                                                      \
    ::s2tx::alloc_probe::on_free(p);                                                        \
    __libc_free(p);                                                                         \
  }                                                                                         \
  void* calloc(size_t n, size_t m) {                                                        \
    void* p = __libc_calloc(n, m);                                                          \
    ::s2tx::alloc_probe::on_alloc(p);                                                       \
    return p;                                                                               \
  }                                                                                         \
  void* realloc(void* old, size_t n) {                                                      \
    ::s2tx::alloc_probe::on_free(old);                                                      \
    void* p = __libc_realloc(old, n);                                                       \
    if (p)                                                                                  \
      ::s2tx::alloc_probe::on_alloc(p);                                                     \
    else if (old && n)                                                                      \
      ::s2tx::alloc_probe::on_alloc(old);                                                   \
    return p;                                                                               \
  }                                                                                         \
  void* memalign(size_t a, size_t n) {                                                      \
    void* p = __libc_memalign(a, n);                                                        \
    ::s2tx::alloc_probe::on_alloc(p);                                                       \
    return p;                                                                               \
  }                                                                                         \
  void* aligned_alloc(size_t a, size_t n) { return memalign(a, n); }                        \
  int posix_memalign(void** out, size_t a, size_t n) {                                      \
    void* p = memalign(a, n);                                                               \
    if (!p) return 12;                                                                      \
    *out = p;                                                                               \
    return 0;                                                                               \
  }                                                                                         \
  }
