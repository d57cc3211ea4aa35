# prompt_templates.py
# Every string the model sees that is not document content. Bump PROMPT_VERSION
# whenever wording changes: transcripts are compared byte for byte.
PROMPT_VERSION = "2"

agent_system = """\
You answer questions about a private document corpus using the tools search, find, open{summarize_name}.

Overall:
- Search before answering when uncertain.
- Progressively explore using find or open when snippets are insufficient.
- Reuse previous results rather than performing search again.
- Cite every time when information is used from tool outputs.

When to use search:
- Primary search tool across the corpus; first choice for any question about it.
- When the user references current or changing information, corpus-specific terms, or acronyms.
- To verify details rather than making assumptions.
- {search_usage}

When to use find:
- In-document pattern search inside one search result, addressed by its reference id.
- When search results do not give enough details.
- To get a focused view of a result in relation to certain terms.

When to use open:
- Windowed full-content retrieval ({window} lines per call) for a search result.
- When snippets are insufficient, or to pull in more content from the most promising results.
- You can open several results; pass line_number to jump close to the relevant content.
{summarize_usage}
Citations:
- Cite a document as [ref: <reference id> | <relevancy score between 0 and 1>], e.g. [ref: turn1search2 | 0.9].
- Only cite reference ids returned by search in this conversation.
- The score states how relevant the cited document is to the question; cite the most relevant first.
"""

search_usage_multi = "Pass up to {cap} reformulations of the question in one call; results are merged and de-duplicated."
search_usage_single = "Pass exactly one query per call."

summarize_usage = """
When to use summarize:
- When told the context budget is nearly used up: record your reasoning so far and list the reference ids whose content must be kept.
"""

single_shot_system = """\
You answer questions about a private document corpus. The search results for the question are below; no further tools are available.
Cite documents as [ref: <reference id> | <relevancy score between 0 and 1>], most relevant first.
"""

oracle_system = """\
You answer questions about a private document corpus. The relevant documents have already been opened below; no further tools are available.
Cite documents as [ref: <reference id> | <relevancy score between 0 and 1>], most relevant first.
"""

# ─────────────────────────────────────────────────────────────────────────────
# Tool descriptions (function-calling schemas)
# ─────────────────────────────────────────────────────────────────────────────
search_tool_multi = (
    "Discover relevant documents from the entire corpus. Accepts up to {cap} query reformulations; "
    "returns up to {k} results per query, combined and de-duplicated, each with a reference id, "
    "title, filename, file type and snippet."
)
search_tool_single = (
    "Discover relevant documents from the entire corpus with one query; returns up to {k} results, "
    "each with a reference id, title, filename, file type and snippet."
)
search_queries_param = "Between 1 and {cap} search queries, ideally different phrasings of the information need."
search_query_param = "The search query."
ref_id_param = "Reference id of a search result, e.g. turn1search3."
find_tool = (
    "Locate specific information inside a single document. Case-insensitive substring matching of each "
    "pattern; returns up to 2 passages per pattern with line numbers, at most about 11k tokens in total."
)
find_patterns_param = "Keywords or short phrases to look for in the document."
find_semantic_param = "Match passages by meaning instead of exact substrings."
open_tool = (
    "Retrieve windowed full content of a single document: {window} line-numbered lines starting at "
    "line_number (default 0). The header reports the range shown and the document length."
)
open_line_param = "Zero-based line to start the window at."
summarize_tool = (
    "Record your current reasoning and designate which references to preserve. Tool output not "
    "associated with the preserved references is removed from the conversation afterwards."
)
summarize_summary_param = "What you have learned so far and what is still missing."
summarize_preserve_param = "Reference ids whose retrieved content must be kept."

# ─────────────────────────────────────────────────────────────────────────────
# In-band notices
# ─────────────────────────────────────────────────────────────────────────────
find_no_matches = "no matches for: {patterns}"
find_truncated = "[truncated at {cap} tokens: {omitted} passage(s) omitted]"
find_semantic_disabled = "Notice: semantic find is disabled; lexical matching was used."
find_semantic_unavailable = "Notice: semantic find is not supported by the search backend; lexical matching was used."

budget_warning = (
    "Context budget notice: the conversation uses {total} of {threshold} tokens. "
    "Call the summarize tool soon to record your findings and choose which references to keep."
)
budget_warning_no_summarize = (
    "Context budget notice: the conversation uses {total} of {threshold} tokens. "
    "Finish gathering evidence and answer soon."
)
forced_completion = "Answer now using only information already gathered; do not call tools."
prune_placeholder = "[content removed after summarization; refs: {ids}]"
aborted_answer = "[aborted: {error}]"


def build_agent_system(*, multi_query_enabled: bool, multi_query_cap: int, window: int,
                       summarize_enabled: bool) -> str:
    return agent_system.format(
        summarize_name=", summarize" if summarize_enabled else "",
        search_usage=(search_usage_multi.format(cap=multi_query_cap) if multi_query_enabled
                      else search_usage_single),
        window=window,
        summarize_usage=summarize_usage if summarize_enabled else "",
    )
