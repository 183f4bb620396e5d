#pragma once

#include "agrag/config.hpp"
#include "agrag/corpus.hpp"
#include "agrag/error.hpp"
#include "agrag/extraction.hpp"
#include "agrag/graph.hpp"
#include "agrag/http_provider.hpp"
#include "agrag/index_io.hpp"
#include "agrag/mcmi.hpp"
#include "agrag/pipeline.hpp"
#include "agrag/providers.hpp"
#include "agrag/retrieval.hpp"
#include "agrag/weighting.hpp"
