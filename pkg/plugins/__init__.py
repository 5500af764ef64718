# plugins package
