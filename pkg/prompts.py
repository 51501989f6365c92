"""
Prompt templates for model-backed value ranking
"""
import json


def get_ranking_user_message(field_key: str, field_label: str, field_description: str | None,
                             observed: str, candidates: list[str]) -> str:
    """Generate the per-cell ranking request"""
    return json.dumps({
        "field_name": field_key,
        "field_label": field_label,
        "field_description": field_description or "",
        "entered_value": observed,
        "permissible_values": candidates,
    }, indent=2, ensure_ascii=False)


RANKING_SYSTEM_PROMPT = f"""
You are repairing metadata entered into a spreadsheet by a laboratory researcher.

A value typed into one column does not match any of the column's permissible values.
Given the field name, label, description, the entered value and the permissible values, judge how likely each permissible value is the one the researcher meant.
Consider spelling, abbreviations, synonyms and domain meaning (for example "formalin" is a fixative closer to "Methanol" than to a stain name).

Only use values from permissible_values, copied exactly. Never invent a value.
The output should be a JSON array of objects with two fields, value and score, where score is a number between 0 and 1. Order the array from most to least likely.

Example #1:
<input>
{get_ranking_user_message("storage_duration_unit", "Storage duration unit", "Unit of the time the sample was stored",
                          "days", ["Year", "Month", "Day", "Hour", "Minute"])}
</input>
<output>
[
    {{"value": "Day", "score": 0.97}},
    {{"value": "Hour", "score": 0.1}},
    {{"value": "Month", "score": 0.05}},
    {{"value": "Year", "score": 0.03}},
    {{"value": "Minute", "score": 0.02}}
]
</output>
"""
