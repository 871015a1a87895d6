function initComments() { return true; }
