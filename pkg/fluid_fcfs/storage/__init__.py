# Artifact and fixture files
