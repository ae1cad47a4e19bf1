#pragma once

#include "crowdlabel/analysis.hpp"
#include "crowdlabel/candidates.hpp"
#include "crowdlabel/classify.hpp"
#include "crowdlabel/config.hpp"
#include "crowdlabel/contains.hpp"
#include "crowdlabel/core.hpp"
#include "crowdlabel/importer.hpp"
#include "crowdlabel/ingest.hpp"
#include "crowdlabel/metrics.hpp"
#include "crowdlabel/pipeline.hpp"
#include "crowdlabel/records.hpp"
#include "crowdlabel/rng.hpp"
#include "crowdlabel/set_partition.hpp"
#include "crowdlabel/simulate.hpp"
