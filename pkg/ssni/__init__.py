# SSNI purification lab package
