#pragma once

#include "nullmargin/config.hpp"
#include "nullmargin/dataio.hpp"
#include "nullmargin/error.hpp"
#include "nullmargin/eval.hpp"
#include "nullmargin/kmmc.hpp"
#include "nullmargin/mining.hpp"
#include "nullmargin/nfst.hpp"
#include "nullmargin/nk3ml.hpp"
#include "nullmargin/scatter.hpp"
#include "nullmargin/selftrain.hpp"
