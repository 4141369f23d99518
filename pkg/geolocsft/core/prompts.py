from langchain_core.prompts import PromptTemplate

# Generic single-image geolocation prompt used for inference over a benchmark
GEOLOCATION_PROMPT = PromptTemplate.from_template("""
Where was this photo taken? Study the attached image carefully: landscape, vegetation, architecture, road
markings, signage, vehicles and any readable text.

Reason step by step about the country, the region and finally the most likely exact spot.
End your response with exactly one line of the form
<answer> lat: <decimal degrees> lon: <decimal degrees> </answer>
using signed decimal degrees (north and east positive).
""")


def geolocation_prompt() -> str:
    return GEOLOCATION_PROMPT.format()
