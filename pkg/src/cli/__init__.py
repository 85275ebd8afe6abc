"""
Command-line routers, one module per subcommand group
"""
