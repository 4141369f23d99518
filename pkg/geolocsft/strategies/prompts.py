from langchain_core.prompts import PromptTemplate

# Prompt to merge K sampled geolocation attempts into one answer
CONSENSUS_PROMPT = PromptTemplate.from_template("""
You are given {num_attempts} independent attempts at geolocating the same image. Each attempt contains the
reasoning that was produced and the coordinates it ended with.

{attempts}

Weigh how strongly the attempts agree with each other and how specific and verifiable their evidence is.
Attempts that converge on the same area reinforce each other, but a single attempt backed by a decisive,
concrete clue (readable text, a unique landmark) may outweigh a vague majority.

Briefly explain your decision, then finish with exactly one line of the form
<answer> lat: <decimal degrees> lon: <decimal degrees> </answer>
""")
