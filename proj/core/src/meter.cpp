#include "revgnn/meter.hpp"

#include <algorithm>

namespace revgnn {

namespace {
thread_local MemoryMeter* g_meter = nullptr;
thread_local bool g_paused = false;
thread_local MemTag g_tag = MemTag::activation;
}  // namespace

std::uint64_t MemoryMeter::register_buffer(std::int64_t bytes, MemTag tag) {
  std::lock_guard<std::mutex> lock(mu_);
  std::uint64_t id = next_id_++;
  ledger_.emplace(id, Entry{bytes, tag});
  reg_counts_[static_cast<int>(tag)]++;
  if (tag == MemTag::solver) {
    live_solver_ += bytes;
    peak_solver_ = std::max(peak_solver_, live_solver_);
  } else {
    live_act_ += bytes;
    peak_act_ = std::max(peak_act_, live_act_);
  }
  return id;
}

void MemoryMeter::release_buffer(std::uint64_t id) {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = ledger_.find(id);
  expect(it != ledger_.end(), "meter: release of unknown buffer id");
  if (it->second.tag == MemTag::solver) {
    live_solver_ -= it->second.bytes;
  } else {
    live_act_ -= it->second.bytes;
  }
  ledger_.erase(it);
}

std::int64_t MemoryMeter::live_bytes() const {
  std::lock_guard<std::mutex> lock(mu_);
  return live_act_ + live_solver_;
}

std::int64_t MemoryMeter::live_activation_bytes() const {
  std::lock_guard<std::mutex> lock(mu_);
  return live_act_;
}

std::int64_t MemoryMeter::peak_activation_bytes() const {
  std::lock_guard<std::mutex> lock(mu_);
  return peak_act_;
}

std::int64_t MemoryMeter::live_solver_bytes() const {
  std::lock_guard<std::mutex> lock(mu_);
  return live_solver_;
}

std::int64_t MemoryMeter::peak_solver_bytes() const {
  std::lock_guard<std::mutex> lock(mu_);
  return peak_solver_;
}

std::int64_t MemoryMeter::registrations(MemTag tag) const {
  std::lock_guard<std::mutex> lock(mu_);
  return reg_counts_[static_cast<int>(tag)];
}

void MemoryMeter::reset_peaks() {
  std::lock_guard<std::mutex> lock(mu_);
  peak_act_ = live_act_;
  peak_solver_ = live_solver_;
  for (auto& c : reg_counts_) c = 0;
}

bool MemoryMeter::balanced() const {
  std::lock_guard<std::mutex> lock(mu_);
  return ledger_.empty() && live_act_ == 0 && live_solver_ == 0;
}

std::size_t MemoryMeter::ledger_size() const {
  std::lock_guard<std::mutex> lock(mu_);
  return ledger_.size();
}

MemoryMeter* active_meter() { return g_paused ? nullptr : g_meter; }
bool meter_paused() { return g_paused; }
MemTag current_tag() { return g_tag; }

MeterScope::MeterScope(MemoryMeter& meter) : prev_(g_meter) { g_meter = &meter; }
MeterScope::~MeterScope() { g_meter = prev_; }

MeterPause::MeterPause() : prev_(g_paused) { g_paused = true; }
MeterPause::~MeterPause() { g_paused = prev_; }

TagScope::TagScope(MemTag tag) : prev_(g_tag) { g_tag = tag; }
TagScope::~TagScope() { g_tag = prev_; }

}  // namespace revgnn
