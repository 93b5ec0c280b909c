#pragma once

#include "pcri/core.hpp"
#include "pcri/image.hpp"
#include "pcri/patcher.hpp"
#include "pcri/metrics.hpp"
#include "pcri/engine.hpp"
#include "pcri/adapters.hpp"
#include "pcri/live.hpp"
#include "pcri/ingest.hpp"
#include "pcri/report.hpp"
#include "pcri/pipeline.hpp"
