#pragma once

#include "pprobe/activation_store.hpp"
#include "pprobe/analysis.hpp"
#include "pprobe/error.hpp"
#include "pprobe/metrics.hpp"
#include "pprobe/parallel.hpp"
#include "pprobe/probe.hpp"
#include "pprobe/report.hpp"
#include "pprobe/task.hpp"
#include "pprobe/trajectory.hpp"
#include "pprobe/transcript.hpp"
