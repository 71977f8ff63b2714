// Umbrella header: the whole epoch store in one include.
//
//   errors        exception hierarchy shared by every layer
//   geometry      heap layout math (size classes, slabs, block directory)
//   backend       persistence interface + write-back/fence counters
//   sim_backend   in-memory backend with seeded partial-persistence crashes
//   file_backend  mmap-style file-backed backend for real durable runs
//   heap          versioned block heap on top of a backend
//   codec         payload encodings for the bundled structures
//   runtime       epoch clock, operation guards, write-back strategies, audits
//   recovery      crash-image scan, zombie scrub, sharded rebuild helpers
//   queue/map/graph  durable structures built on the runtime
//   oplog         per-thread operation journal for crash-consistency checks
//   harness       crash/recovery test loop driving structures + oplog
//   bench         throughput and recovery-time measurement entry points
#pragma once

#include "epochstore/errors.hpp"
#include "epochstore/geometry.hpp"
#include "epochstore/backend.hpp"
#include "epochstore/sim_backend.hpp"
#include "epochstore/file_backend.hpp"
#include "epochstore/heap.hpp"
#include "epochstore/codec.hpp"
#include "epochstore/runtime.hpp"
#include "epochstore/recovery.hpp"
#include "epochstore/queue.hpp"
#include "epochstore/map.hpp"
#include "epochstore/graph.hpp"
#include "epochstore/oplog.hpp"
#include "epochstore/harness.hpp"
#include "epochstore/bench.hpp"
