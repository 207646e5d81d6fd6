# Flow package
