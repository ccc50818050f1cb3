#pragma once

#include "tcmeval/error.hpp"
#include "tcmeval/text.hpp"
#include "tcmeval/herb_lexicon.hpp"
#include "tcmeval/response_parser.hpp"
#include "tcmeval/case_record.hpp"
#include "tcmeval/rubric.hpp"
#include "tcmeval/prompts.hpp"
#include "tcmeval/judge_gateway.hpp"
#include "tcmeval/http_transport.hpp"
#include "tcmeval/analytics.hpp"
#include "tcmeval/human_eval.hpp"
#include "tcmeval/dataset_tools.hpp"
#include "tcmeval/event_log.hpp"
#include "tcmeval/ingest.hpp"
#include "tcmeval/config.hpp"
#include "tcmeval/service.hpp"
