from langchain_core.prompts import PromptTemplate

# Prompt to produce a structured geo-caption for one image
GEO_CAPTION_PROMPT = PromptTemplate.from_template("""
You are an expert geographer. Analyze the attached street-level image and determine where it was taken.
Image reference: {image_ref}

Work through the following sections:

1. Broad analysis: describe the regional context within a {broad_radius_km} km radius: terrain, climate,
   vegetation zone and the level of development that the image implies.
2. Local analysis: describe the immediate surroundings within a {local_radius_km} km radius: road layout,
   buildings, land use and anything that narrows the location down.
3. Micro-features: identify fine-grained details (infrastructure, signage, road markings, utility poles,
   vegetation species, architectural elements) and explain the geographic significance of each one.
4. Disambiguation: name regions that look visually similar and give specific, verifiable reasons, based on
   the micro-features, why the image cannot belong to each of them.

Output a single JSON object and nothing else, with exactly these keys:
{{
  "broad_analysis": "<text>",
  "local_analysis": "<text>",
  "micro_features": [{{"feature": "<text>", "geographic_significance": "<text>"}}],
  "disambiguation": [{{"similar_region": "<text>", "exclusion_reason": "<text>"}}],
  "final_point": {{"lat": <decimal degrees>, "lon": <decimal degrees>}}
}}

The final coordinates will be emitted after your JSON in the form <answer> lat: ... lon: ... </answer>,
so "final_point" must hold your single best estimate. Do not write answer tags inside the JSON.
""")
